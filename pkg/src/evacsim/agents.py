"""DQN-family agents for the evacuation environment.

Three variants share one training loop: plain DQN, Double DQN (online argmax,
target evaluation) and Dueling DQN (value/advantage heads). Any of them can be
warm-started by regressing the network onto a tabular Q-matrix first.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .env import FireEvacuationEnv
from .nn import SMALL_HIDDEN, Adam, QNetwork
from .tabular import flatten_qmatrix

VARIANTS = ("DQN", "DDQN", "DUELING")
REWARD_MODES = ("raw", "clip")
CLIP_RANGE = (-100.0, 10.0)


class DivergenceError(RuntimeError):
    pass


@dataclass
class AgentConfig:
    variant: str = "DUELING"
    gamma: float = 0.9
    epsilon0: float = 1.0
    epsilon_decay: float = 0.99
    epsilon_min: float = 0.01
    capacity: int = 2000
    batch_size: int = 32
    target_sync: int = 100
    episodes: int = 500
    max_steps: int = 1000
    lr: float = 1e-3
    hidden: tuple[int, ...] = SMALL_HIDDEN
    aggregation: str = "mean"
    replay: bool = True
    reward_mode: str = "clip"
    raw_input: bool = False
    pretrain_epochs: int = 20000
    pretrain_tol: float = 1e-4
    pretrain_lr: float = 1e-3
    pretrain_patience: int = 2000
    # with a mask, let the network emit only the retained actions
    compact_mask: bool = False
    dtype: str = "float32"

    def __post_init__(self) -> None:
        self.variant = self.variant.upper()
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon_min <= self.epsilon0 <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon0 <= 1")
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.capacity < 1 or self.batch_size < 1 or self.target_sync < 1:
            raise ValueError("capacity, batch_size and target_sync must be positive")
        if self.episodes < 1 or self.max_steps < 1:
            raise ValueError("episodes and max_steps must be positive")
        self.hidden = tuple(self.hidden)

    def epsilon(self, episode: int) -> float:
        return max(self.epsilon_min, self.epsilon0 * self.epsilon_decay**episode)


class ReplayBuffer:
    """Fixed-capacity FIFO store of transitions kept in parallel arrays."""

    def __init__(self, capacity: int, state_dim: int, dtype=np.float32):
        self.capacity = int(capacity)
        self.states = np.zeros((capacity, state_dim), dtype=dtype)
        self.next_states = np.zeros((capacity, state_dim), dtype=dtype)
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity, dtype=np.float64)
        self.terminals = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.head = 0  # slot the next push overwrites

    def __len__(self) -> int:
        return self.size

    def push(self, s, a: int, r: float, s_next, terminal: bool) -> None:
        i = self.head
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.terminals[i] = terminal
        self.head = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def oldest(self) -> int:
        return self.head if self.size == self.capacity else 0

    def sample(self, batch_size: int, rng: np.random.Generator) -> np.ndarray:
        """Indices of ``min(batch_size, len)`` distinct stored transitions."""
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.choice(self.size, size=min(batch_size, self.size), replace=False)


def build_network(
    n_rooms: int, cfg: AgentConfig, seed: int | None = 0, n_outputs: int | None = None
) -> QNetwork:
    return QNetwork(
        n_rooms,
        n_rooms * n_rooms if n_outputs is None else n_outputs,
        hidden=cfg.hidden,
        dueling=cfg.variant == "DUELING",
        aggregation=cfg.aggregation,
        seed=seed,
        dtype=np.dtype(cfg.dtype),
    )


@dataclass
class PretrainReport:
    epochs: int
    final_loss: float
    losses: list[float]
    stalled: bool = False


def pretrain_network(
    net: QNetwork,
    q_noisy: np.ndarray,
    cfg: AgentConfig | None = None,
    columns: np.ndarray | None = None,
) -> PretrainReport:
    """Overfit ``net`` on the empty state so its output reproduces ``q_noisy``.

    Output index ``dest * n + source`` is regressed onto ``q_noisy[source, dest]``.
    For a compact network, ``columns`` lists the action index of each output.
    A loss that fails to improve for ``pretrain_patience`` epochs is flagged in
    the report but does not stop the loop before the epoch cap.
    """
    cfg = AgentConfig() if cfg is None else cfg
    q_noisy = np.asarray(q_noisy, dtype=np.float64)
    n = q_noisy.shape[0]
    target = flatten_qmatrix(q_noisy)
    if columns is not None:
        target = target[np.asarray(columns)]
    if q_noisy.shape != (n, n) or net.n_outputs != target.size:
        raise ValueError(f"network with {net.n_outputs} outputs cannot fit a {q_noisy.shape} matrix")
    x = np.zeros(net.n_inputs)
    opt = Adam(net.params.size, lr=cfg.pretrain_lr, dtype=net.dtype)
    losses: list[float] = []
    best, since_best, stalled = np.inf, 0, False
    for _ in range(cfg.pretrain_epochs):
        loss, grad = net.loss_and_grad(x, target)
        losses.append(loss)
        if loss < cfg.pretrain_tol:
            break
        if loss < best:
            best, since_best = loss, 0
        else:
            since_best += 1
            if since_best >= cfg.pretrain_patience:
                stalled = True
        opt.step(net.params, grad)
    return PretrainReport(len(losses), losses[-1], losses, stalled)


@dataclass
class Transition:
    state: np.ndarray
    action: int
    reward: float
    next_state: np.ndarray
    terminal: bool


class Agent:
    """Online/target network pair plus replay memory and optional action mask.

    With ``cfg.compact_mask`` and a mask, the network has one output per
    retained action; masked actions read as the bare mask value.
    """

    def __init__(
        self,
        n_rooms: int,
        cfg: AgentConfig | None = None,
        seed: int | None = 0,
        mask: np.ndarray | None = None,
        net: QNetwork | None = None,
    ):
        self.cfg = AgentConfig() if cfg is None else cfg
        self.n = int(n_rooms)
        self.n_actions = self.n * self.n
        self.set_mask(mask)
        self.compact = self.cfg.compact_mask and self.mask is not None
        n_out = self.allowed.size if self.compact else self.n_actions
        self.net = build_network(self.n, self.cfg, seed, n_out) if net is None else net
        if self.net.n_outputs != n_out:
            raise ValueError(f"network needs {n_out} outputs, has {self.net.n_outputs}")
        self.target = self.net.copy()
        self.opt = Adam(self.net.params.size, lr=self.cfg.lr, dtype=self.net.dtype)
        self.buffer = ReplayBuffer(self.cfg.capacity, self.n, dtype=self.net.dtype)
        self.updates = 0

    def set_mask(self, mask: np.ndarray | None) -> None:
        if mask is None:
            self.mask = None
            self.allowed = np.arange(self.n_actions)
        else:
            mask = np.asarray(mask, dtype=np.float64)
            if mask.shape != (self.n_actions,):
                raise ValueError(f"mask length {mask.size} != {self.n_actions}")
            self.mask = mask
            self.allowed = np.flatnonzero(mask == 0.0)
        self.column_of = np.full(self.n_actions, -1, dtype=np.int64)
        self.column_of[self.allowed] = np.arange(self.allowed.size)

    @property
    def output_columns(self) -> np.ndarray | None:
        """Action index of each network output (``None`` for full outputs)."""
        return self.allowed if self.compact else None

    def sync_target(self) -> None:
        self.target.load_params(self.net)

    def q_values(self, x, net: QNetwork | None = None) -> np.ndarray:
        """Masked Q-values over the full ``n * n`` action space."""
        q = (self.net if net is None else net).forward(x).astype(np.float64)
        if self.mask is None:
            return q
        if not self.compact:
            return q + self.mask
        full = np.broadcast_to(self.mask, q.shape[:-1] + (self.n_actions,)).copy()
        full[..., self.allowed] += q
        return full

    def select_action(self, x, eps: float, rng: np.random.Generator) -> int:
        """Epsilon-greedy; exploration draws uniformly from unmasked actions."""
        if eps > 0.0 and rng.random() < eps:
            return int(self.allowed[rng.integers(self.allowed.size)])
        return int(np.argmax(self.q_values(x)))

    def compute_targets(self, rewards, next_states, terminals) -> np.ndarray:
        rewards = np.asarray(rewards, dtype=np.float64)
        q_next = self.q_values(next_states, self.target)
        if self.cfg.variant == "DDQN":
            pick = np.argmax(self.q_values(next_states), axis=1)
            boot = q_next[np.arange(len(pick)), pick]
        else:
            boot = q_next.max(axis=1)
        return np.where(terminals, rewards, rewards + self.cfg.gamma * boot)

    def compute_target(self, tr: Transition) -> float:
        y = self.compute_targets(
            [tr.reward], np.asarray(tr.next_state)[None, :], np.array([tr.terminal])
        )
        return float(y[0])

    def shape_reward(self, r: float) -> float:
        if self.cfg.reward_mode == "clip":
            return float(np.clip(r, *CLIP_RANGE))
        return r

    def learn(self, states, actions, rewards, next_states, terminals) -> float:
        """One masked-loss Adam step on a minibatch; returns the loss."""
        y = self.compute_targets(rewards, next_states, terminals)
        if self.compact:
            actions = self.column_of[actions]
            if (actions < 0).any():
                raise ValueError("compact network cannot learn a masked action")
        loss, grad = self.net.loss_and_grad(states, y, actions)
        if not np.isfinite(loss) or not np.isfinite(grad).all():
            raise DivergenceError(f"non-finite loss/gradient at update {self.updates} (loss={loss})")
        self.opt.step(self.net.params, grad)
        self.updates += 1
        if self.updates % self.cfg.target_sync == 0:
            self.sync_target()
        return loss

    def observe(self, s, a: int, r: float, s_next, terminal: bool, rng: np.random.Generator) -> float:
        """Store the transition and take one gradient step."""
        if not self.cfg.replay:
            return self.learn(s[None, :], np.array([a]), np.array([r]), s_next[None, :], np.array([terminal]))
        self.buffer.push(s, a, r, s_next, terminal)
        idx = self.buffer.sample(self.cfg.batch_size, rng)
        b = self.buffer
        return self.learn(b.states[idx], b.actions[idx], b.rewards[idx], b.next_states[idx], b.terminals[idx])


@dataclass
class RunRecord:
    time_steps: list[int] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    epsilons: list[float] = field(default_factory=list)
    wall_ms: list[float] = field(default_factory=list)

    def append(self, steps: int, reward: float, eps: float, ms: float) -> None:
        self.time_steps.append(int(steps))
        self.rewards.append(float(reward))
        self.epsilons.append(float(eps))
        self.wall_ms.append(float(ms))

    def __len__(self) -> int:
        return len(self.time_steps)

    @property
    def mean_steps(self) -> float:
        return float(np.mean(self.time_steps))

    @property
    def min_steps(self) -> int:
        return int(min(self.time_steps))

    def trailing_mean(self, k: int) -> float:
        return float(np.mean(self.time_steps[-k:]))

    def rows(self, timing: bool = True):
        for i, (ts, r, e, ms) in enumerate(zip(self.time_steps, self.rewards, self.epsilons, self.wall_ms)):
            yield [i, ts, repr(r), repr(e), f"{ms:.3f}" if timing else ""]

    def to_csv(self, path: str | Path, timing: bool = True) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "time_steps", "total_reward", "epsilon", "wall_ms"])
            w.writerows(self.rows(timing))


def train(
    agent: Agent,
    env: FireEvacuationEnv,
    cfg: AgentConfig | None = None,
    seed: int = 0,
    episodes: int | None = None,
    progress=None,
    record: RunRecord | None = None,
) -> RunRecord:
    """Roll out epsilon-greedy episodes, learning after every environment step.

    Episodes are appended to ``record`` when given, so a caller still holds the
    completed episodes if the run aborts.
    """
    cfg = agent.cfg if cfg is None else cfg
    episodes = cfg.episodes if episodes is None else episodes
    env_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    env.seed(np.random.default_rng(env_ss).integers(2**63))
    rng = np.random.default_rng(agent_ss)
    record = RunRecord() if record is None else record
    for ep in range(episodes):
        t0 = time.perf_counter()
        eps = cfg.epsilon(ep)
        x = env.encode(env.reset(), raw=cfg.raw_input)
        total, steps = 0.0, 0
        while steps < cfg.max_steps:
            a = agent.select_action(x, eps, rng)
            out = env.step(a)
            steps += 1
            total += out.reward
            x_next = env.encode(out.next_state, raw=cfg.raw_input)
            agent.observe(x, a, agent.shape_reward(out.reward), x_next, out.terminal, rng)
            x = x_next
            if out.terminal:
                break
        if not np.isfinite(agent.net.params).all():
            raise DivergenceError(f"non-finite network parameters after episode {ep}")
        record.append(steps, total, eps, 1000.0 * (time.perf_counter() - t0))
        if progress is not None:
            progress(ep, record)
    return record


def greedy_rollout(agent: Agent, env: FireEvacuationEnv, max_steps: int = 1000, raw_input: bool = False) -> int:
    """Steps taken by the purely greedy policy from the initial state."""
    x = env.encode(env.reset(), raw=raw_input)
    for step in range(1, max_steps + 1):
        out = env.step(agent.select_action(x, 0.0, None))
        if out.terminal:
            return step
        x = env.encode(out.next_state, raw=raw_input)
    return max_steps


def random_agent(
    env: FireEvacuationEnv,
    episodes: int = 100,
    seed: int = 0,
    max_steps: int = 1000,
    record: RunRecord | None = None,
) -> RunRecord:
    """Uniformly random actions under the same cap and metrics as ``train``."""
    env_ss, agent_ss = np.random.SeedSequence(seed).spawn(2)
    env.seed(np.random.default_rng(env_ss).integers(2**63))
    rng = np.random.default_rng(agent_ss)
    record = RunRecord() if record is None else record
    for _ in range(episodes):
        t0 = time.perf_counter()
        env.reset()
        total, steps = 0.0, 0
        while steps < max_steps:
            out = env.step(int(rng.integers(env.n_actions)))
            steps += 1
            total += out.reward
            if out.terminal:
                break
        record.append(steps, total, 1.0, 1000.0 * (time.perf_counter() - t0))
    return record
