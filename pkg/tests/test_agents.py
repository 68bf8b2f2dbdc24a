from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evacsim.agents import (
    Agent,
    AgentConfig,
    DivergenceError,
    ReplayBuffer,
    Transition,
    greedy_rollout,
    pretrain_network,
    random_agent,
    train,
)
from evacsim.env import FireEvacuationEnv
from evacsim.nn import QNetwork
from evacsim.reduction import build_importance
from evacsim.tabular import apply_noise, flatten_qmatrix, train_qmatrix

from conftest import argmax_agrees, occupied_source_network

TINY = dict(hidden=(16, 16), dtype="float64")


def biased_net(n_rooms: int, bias: np.ndarray) -> QNetwork:
    """Network whose output is ``bias`` for every input."""
    net = QNetwork(n_rooms, bias.size, hidden=(4,), seed=0)
    net.params[:] = 0.0
    net.layers[-1][1][:] = bias
    return net


def test_replay_fifo_and_capacity():
    buf = ReplayBuffer(3, 2)
    for i in range(5):
        buf.push(np.full(2, i), i, float(i), np.full(2, i + 1), False)
        assert len(buf) == min(i + 1, 3)
    assert sorted(buf.actions.tolist()) == [2, 3, 4]
    assert buf.actions[buf.oldest()] == 2


@settings(max_examples=30, deadline=None)
@given(cap=st.integers(1, 50), pushes=st.integers(1, 120), batch=st.integers(1, 40), seed=st.integers(0, 999))
def test_replay_sampling_distinct(cap, pushes, batch, seed):
    buf = ReplayBuffer(cap, 1)
    for i in range(pushes):
        buf.push([i], i, 0.0, [i], False)
    idx = buf.sample(batch, np.random.default_rng(seed))
    assert len(set(idx.tolist())) == len(idx) == min(batch, len(buf))
    # FIFO: exactly the most recent min(cap, pushes) transitions remain
    assert sorted(buf.actions[: len(buf)].tolist()) == list(range(max(0, pushes - cap), pushes))


def test_select_action_argmax_and_ties():
    bias = np.zeros(25)
    bias[22] = 5.0
    agent = Agent(5, AgentConfig(variant="DQN", **TINY), net=biased_net(5, bias))
    assert agent.select_action(np.zeros(5), 0.0, None) == 22
    bias[2] = 5.0
    agent = Agent(5, AgentConfig(variant="DQN", **TINY), net=biased_net(5, bias))
    assert agent.select_action(np.zeros(5), 0.0, None) == 2


def test_select_action_uniform_exploration():
    agent = Agent(5, AgentConfig(variant="DQN", **TINY), net=biased_net(5, np.zeros(25)))
    rng = np.random.default_rng(0)
    draws = 100_000
    counts = np.bincount([agent.select_action(np.zeros(5), 1.0, rng) for _ in range(draws)], minlength=25)
    expected = draws / 25
    sd = np.sqrt(draws * (1 / 25) * (24 / 25))
    assert np.abs(counts - expected).max() < 3 * sd * 1.5  # 25 cells; slack for the max over cells


def test_masked_exploration_stays_inside_mask(fig2):
    ai = build_importance(fig2, 2)
    agent = Agent(5, AgentConfig(variant="DQN", **TINY), mask=ai.mask)
    rng = np.random.default_rng(1)
    picks = {agent.select_action(np.zeros(5), 1.0, rng) for _ in range(2000)}
    assert picks == set(np.flatnonzero(ai.mask == 0.0).tolist())


def test_targets():
    target_bias = np.zeros(25)
    target_bias[3], target_bias[7] = 2.0, 7.0
    online_bias = np.zeros(25)
    online_bias[3] = 1.0
    s = np.zeros(5)
    for variant, expected in (("DQN", 0.9 * 7.0), ("DDQN", 0.9 * 2.0)):
        agent = Agent(5, AgentConfig(variant=variant, gamma=0.9, **TINY), net=biased_net(5, online_bias))
        agent.target = biased_net(5, target_bias)
        assert agent.compute_target(Transition(s, 0, 0.0, s, False)) == pytest.approx(expected)
        assert agent.compute_target(Transition(s, 0, 10.0, s, True)) == 10.0

    five = np.zeros(25)
    five[0] = 5.0
    agent = Agent(5, AgentConfig(variant="DQN", gamma=0.9, **TINY))
    agent.target = biased_net(5, five)
    assert agent.compute_target(Transition(s, 0, 10.0, s, False)) == pytest.approx(14.5)


def test_terminal_rows_have_no_bootstrap():
    agent = Agent(5, AgentConfig(variant="DUELING", **TINY), seed=3)
    rng = np.random.default_rng(0)
    nxt = rng.uniform(size=(6, 5))
    r = rng.normal(size=6)
    term = np.array([True, False, True, False, True, False])
    y = agent.compute_targets(r, nxt, term)
    assert np.array_equal(y[term], r[term])
    assert not np.allclose(y[~term], r[~term])


def test_pretrain_zero_matrix_converges():
    net = QNetwork(5, 25, hidden=(16,), seed=1)
    rep = pretrain_network(net, np.zeros((5, 5)), AgentConfig(pretrain_epochs=5000, pretrain_tol=1e-8))
    assert rep.final_loss < 1e-8
    assert np.abs(net.forward(np.zeros(5))).max() < 1e-3


def test_pretrain_small_net_reproduces_q(fig2):
    q = apply_noise(train_qmatrix(fig2, seed=0), 10.0)
    cfg = AgentConfig(pretrain_lr=1e-2, **TINY)
    net = QNetwork(5, 25, hidden=cfg.hidden, seed=0)
    rep = pretrain_network(net, q, cfg)
    out = net.forward(np.zeros(5))
    assert np.mean((out - flatten_qmatrix(q)) ** 2) < 1e-3
    assert rep.epochs < cfg.pretrain_epochs
    for i in range(5):
        assert argmax_agrees(out[i::5], q[i])


def test_pretrain_reports_stall():
    net = QNetwork(2, 4, hidden=(3,), seed=0)
    # a learning rate of zero can never improve the loss
    cfg = AgentConfig(pretrain_epochs=50, pretrain_patience=10, pretrain_lr=0.0)
    rep = pretrain_network(net, np.ones((2, 2)), cfg)
    assert rep.stalled and rep.epochs == 50


def test_pretrain_shape_check():
    with pytest.raises(ValueError):
        pretrain_network(QNetwork(5, 24, hidden=(4,)), np.zeros((5, 5)))


def test_perfect_q_rollout_takes_sixty_steps(fig2):
    g = fig2.with_uncertainty(0.0)
    q = train_qmatrix(g, seed=0)
    agent = Agent(5, AgentConfig(variant="DQN"), net=occupied_source_network(q, g.bottleneck))
    assert greedy_rollout(agent, FireEvacuationEnv(g)) == 60


def test_target_network_only_changes_on_sync(fig2):
    cfg = AgentConfig(variant="DQN", target_sync=7, episodes=1, max_steps=40, **TINY)
    agent = Agent(5, cfg, seed=0)
    snapshots = {0: agent.target.params.copy()}
    seen = []
    orig = agent.learn

    def spy(*args):
        loss = orig(*args)
        seen.append((agent.updates, agent.target.params.copy(), agent.net.params.copy()))
        return loss

    agent.learn = spy
    train(agent, FireEvacuationEnv(fig2), cfg, seed=0)
    assert len(seen) == 40
    current = snapshots[0]
    for updates, target, online in seen:
        if updates % 7 == 0:
            assert np.array_equal(target, online)
            current = target
        else:
            assert np.array_equal(target, current)


def test_train_record_and_cap(fig2):
    cfg = AgentConfig(variant="DDQN", episodes=3, max_steps=50, **TINY)
    rec = train(Agent(5, cfg, seed=0), FireEvacuationEnv(fig2), cfg, seed=4)
    assert len(rec) == 3
    assert all(1 <= s <= 50 for s in rec.time_steps)
    assert rec.epsilons[0] == 1.0 and rec.epsilons[1] == pytest.approx(0.99)


def test_train_is_seeded(fig2):
    def run():
        cfg = AgentConfig(variant="DUELING", episodes=2, max_steps=60, **TINY)
        return train(Agent(5, cfg, seed=1), FireEvacuationEnv(fig2), cfg, seed=9)

    a, b = run(), run()
    assert a.time_steps == b.time_steps and a.rewards == b.rewards


def test_no_replay_mode(fig2):
    cfg = AgentConfig(variant="DQN", episodes=1, max_steps=20, replay=False, **TINY)
    agent = Agent(5, cfg, seed=0)
    train(agent, FireEvacuationEnv(fig2), cfg, seed=0)
    assert len(agent.buffer) == 0 and agent.updates == 20


def test_divergence_guard(fig2):
    cfg = AgentConfig(variant="DQN", episodes=1, max_steps=5, **TINY)
    agent = Agent(5, cfg, seed=0)
    agent.net.params[0] = np.nan
    with pytest.raises(DivergenceError):
        train(agent, FireEvacuationEnv(fig2), cfg, seed=0)


def test_partial_record_survives_failure(fig2):
    cfg = AgentConfig(variant="DQN", episodes=3, max_steps=5, **TINY)
    agent = Agent(5, cfg, seed=0)
    calls = {"n": 0}
    orig = agent.learn

    def flaky(*args):
        calls["n"] += 1
        if calls["n"] > 7:
            raise DivergenceError("boom")
        return orig(*args)

    agent.learn = flaky
    from evacsim.agents import RunRecord

    rec = RunRecord()
    with pytest.raises(DivergenceError):
        train(agent, FireEvacuationEnv(fig2), cfg, seed=0, record=rec)
    assert len(rec) == 1


def test_compact_head_matches_masked_full_vector(fig2):
    ai = build_importance(fig2, 2)
    cfg = AgentConfig(variant="DUELING", compact_mask=True, **TINY)
    agent = Agent(5, cfg, seed=0, mask=ai.mask)
    assert agent.net.n_outputs == 10
    x = np.random.default_rng(0).uniform(size=(3, 5))
    full = agent.q_values(x)
    kept = ai.mask == 0.0
    assert np.array_equal(full[:, kept], agent.net.forward(x).astype(np.float64))
    assert (full[:, ~kept] == ai.mask[~kept]).all()
    with pytest.raises(ValueError):
        agent.learn(x[:1], np.array([int(np.flatnonzero(~kept)[0])]), np.zeros(1), x[:1], np.array([True]))


def test_compact_pretraining_targets_kept_columns(fig2):
    ai = build_importance(fig2, 2)
    cfg = AgentConfig(variant="DQN", compact_mask=True, pretrain_lr=1e-2, **TINY)
    agent = Agent(5, cfg, seed=0, mask=ai.mask)
    q = apply_noise(train_qmatrix(fig2, seed=0), 10.0)
    rep = pretrain_network(agent.net, q, cfg, columns=agent.output_columns)
    assert rep.final_loss < cfg.pretrain_tol
    kept = agent.output_columns
    assert np.allclose(agent.net.forward(np.zeros(5)), flatten_qmatrix(q)[kept], atol=0.05)


def test_random_agent_contract(fig2):
    env = FireEvacuationEnv(fig2)
    a = random_agent(env, episodes=3, seed=5, max_steps=200)
    b = random_agent(env, episodes=3, seed=5, max_steps=200)
    assert a.time_steps == b.time_steps and a.rewards == b.rewards
    assert max(a.time_steps) <= 200


def test_config_validation():
    with pytest.raises(ValueError):
        AgentConfig(variant="PPO")
    with pytest.raises(ValueError):
        AgentConfig(gamma=1.0)
    with pytest.raises(ValueError):
        AgentConfig(reward_mode="scaled")
    assert AgentConfig(variant="ddqn").variant == "DDQN"
    assert AgentConfig().max_steps == 1000


def test_reward_clip_flag():
    assert Agent(2, AgentConfig(reward_mode="clip", **TINY)).shape_reward(-1e6) == -100.0
    assert Agent(2, AgentConfig(reward_mode="raw", **TINY)).shape_reward(-1e6) == -1e6
