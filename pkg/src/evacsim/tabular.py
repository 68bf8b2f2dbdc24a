"""Tabular Q-learning on the shortest-path instance, and the sigma offset.

``Q[i, j]`` is the value of moving from room ``i`` to room ``j``.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .building import BuildingGraph, exit_distances
from .pretrain_env import ShortestPathEnv


class ConvergenceWarning(UserWarning):
    pass


class PolicyCycleError(RuntimeError):
    """Greedy policy revisits a room (or stalls) before reaching an exit."""


@dataclass(frozen=True)
class QLearnHyper:
    eta: float = 0.5
    gamma: float = 0.9
    epsilon0: float = 1.0
    epsilon_decay: float = 0.995
    epsilon_min: float = 0.05
    episodes: int = 1000
    early_stop_tol: float = 1e-6
    min_episodes: int = 200
    # consecutive quiet episodes required; None -> max(50, 2 * rooms)
    patience: int | None = None
    # per-pair learning-rate decay: eta / (1 + visits * visit_decay)
    visit_decay: float = 1e-3
    max_steps: int | None = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.eta < 1.0:
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if not 0.0 <= self.epsilon_min <= self.epsilon0 <= 1.0:
            raise ValueError("need 0 <= epsilon_min <= epsilon0 <= 1")
        if not 0.0 < self.epsilon_decay <= 1.0:
            raise ValueError("epsilon_decay must lie in (0, 1]")
        if self.episodes < 1:
            raise ValueError("episodes must be >= 1")

    @classmethod
    def for_graph(cls, g: BuildingGraph, **overrides) -> QLearnHyper:
        """Defaults scaled to the building: slower decay, higher floor for large graphs."""
        if g.n > 30:
            overrides = {"epsilon_decay": 0.999, "epsilon_min": 0.1, "episodes": 3000} | overrides
        return cls(**overrides)


def q_update(
    Q: np.ndarray,
    s: int,
    a: int,
    r: float,
    s_next: int,
    terminal: bool,
    eta: float,
    gamma: float,
) -> np.ndarray:
    """One in-place Q-learning update; returns ``Q``."""
    bootstrap = 0.0 if terminal else gamma * Q[s_next].max()
    Q[s, a] += eta * (r + bootstrap - Q[s, a])
    return Q


def train_qmatrix(g: BuildingGraph, h: QLearnHyper | None = None, seed: int = 0) -> np.ndarray:
    """Epsilon-greedy Q-learning with random starts until the table stops moving."""
    h = QLearnHyper.for_graph(g) if h is None else h
    n = g.n
    rng = np.random.default_rng(seed)
    env = ShortestPathEnv(g, max_steps=h.max_steps)
    env.rng = rng
    Q = np.zeros((n, n))
    visits = np.zeros((n, n), dtype=np.int64)
    eps = h.epsilon0
    patience = max(50, 2 * n) if h.patience is None else h.patience
    quiet = 0
    stopped_early = False

    for episode in range(h.episodes):
        before = Q.copy()
        s = env.reset().position
        while not env.done and not env.truncated:
            if rng.random() < eps:
                a = int(rng.integers(n))
            else:
                a = int(np.argmax(Q[s]))
            nxt, r, done = env.step(a)
            eta = h.eta / (1.0 + visits[s, a] * h.visit_decay)
            visits[s, a] += 1
            q_update(Q, s, a, r, nxt.position, done, eta, h.gamma)
            s = nxt.position
        eps = max(h.epsilon_min, eps * h.epsilon_decay)
        quiet = quiet + 1 if np.abs(Q - before).max() < h.early_stop_tol else 0
        if episode + 1 >= h.min_episodes and quiet >= patience:
            stopped_early = True
            break

    if not stopped_early and not matches_shortest_paths(Q, g):
        warnings.warn(
            f"Q-learning used all {h.episodes} episodes without settling and the greedy "
            "policy is not shortest-path optimal",
            ConvergenceWarning,
            stacklevel=2,
        )
    return Q


def apply_noise(Q: np.ndarray, sigma: float) -> np.ndarray:
    """Shift non-positive entries up by sigma and positive entries down by sigma."""
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    return np.where(Q <= 0, Q + sigma, Q - sigma)


def greedy_path(Q: np.ndarray, g: BuildingGraph, start: int) -> list[int]:
    """Follow row-wise argmax (lowest index on ties) from ``start`` to an exit."""
    if start in g.exits:
        raise ValueError(f"start room {start} is an exit")
    path = [start]
    room = start
    for _ in range(g.n):
        dest = int(np.argmax(Q[room]))
        if not g.adjacency[room, dest]:
            raise PolicyCycleError(f"greedy move {room}->{dest} is illegal; walker stalls at {room}")
        path.append(dest)
        if dest in g.exits:
            return path
        if dest in path[:-1]:
            raise PolicyCycleError(f"greedy policy cycles: {path}")
        room = dest
    raise PolicyCycleError(f"no exit within {g.n} greedy steps: {path}")


def matches_shortest_paths(Q: np.ndarray, g: BuildingGraph) -> bool:
    dist = exit_distances(g)
    for i in g.non_exits:
        try:
            if len(greedy_path(Q, g, i)) - 1 != dist[i]:
                return False
        except PolicyCycleError:
            return False
    return True


def flatten_qmatrix(Q: np.ndarray) -> np.ndarray:
    """Network-ordered vector: entry ``dest * n + source`` holds ``Q[source, dest]``."""
    return np.ascontiguousarray(Q.T).reshape(-1)


def save_qmatrix(Q: np.ndarray, path: str | Path) -> None:
    np.savetxt(path, Q, delimiter=",", fmt="%.17g")


def load_qmatrix(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
