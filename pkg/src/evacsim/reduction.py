"""Action-importance mask: keep the k best one-step moves per source room.

Every room (exits included) keeps exactly ``k`` destinations ranked by the
shortest-path pretraining reward, so the mask always holds ``k * n`` zeros.
The rest of the ``n * n`` actions get a large negative offset that is added to
the network output.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .building import BuildingGraph, max_degree
from .env import encode_action
from .pretrain_env import ShortestPathEnv, transition_reward

MASKED = -9999.0


@dataclass(frozen=True)
class ActionImportance:
    mask: np.ndarray
    k: int

    def __post_init__(self) -> None:
        self.mask.setflags(write=False)

    @property
    def n_actions(self) -> int:
        return int(self.mask.size)

    @property
    def retained(self) -> int:
        return int(np.count_nonzero(self.mask == 0.0))

    @property
    def reduction(self) -> float:
        """Fraction of the action space removed."""
        return 1.0 - self.retained / self.n_actions


def _check_k(g: BuildingGraph, k: int) -> None:
    if not 1 <= k <= g.n:
        raise ValueError(f"k must lie in [1, {g.n}], got {k}")


def one_step_rewards(g: BuildingGraph, room: int, replay: bool = False) -> np.ndarray:
    """Pretraining reward of ``room -> d`` for every destination ``d``.

    ``replay=True`` measures them by stepping a real pretraining environment
    instead of reading the graph directly.
    """
    if not 0 <= room < g.n:
        raise ValueError(f"room {room} out of range")
    if not replay:
        return np.array([transition_reward(g, room, d) for d in range(g.n)])
    env = ShortestPathEnv(g)
    out = np.empty(g.n)
    for d in range(g.n):
        env.place(room)
        _, out[d], _ = env.step(d)
    return out


def one_step_sim(g: BuildingGraph, room: int, k: int, replay: bool = False) -> list[int]:
    """The ``k`` highest-reward destinations from ``room``; ties to the lower index."""
    _check_k(g, k)
    r = one_step_rewards(g, room, replay)
    order = np.lexsort((np.arange(g.n), -r))
    return [int(d) for d in order[:k]]


def build_importance(g: BuildingGraph, k: int | None = None, replay: bool = False) -> ActionImportance:
    """Zero at ``dest * n + room`` for each room's ``k`` best destinations."""
    k = max_degree(g) if k is None else int(k)
    _check_k(g, k)
    mask = np.full(g.n * g.n, MASKED)
    for room in range(g.n):
        for dest in one_step_sim(g, room, k, replay):
            mask[encode_action(room, dest, g.n)] = 0.0
    return ActionImportance(mask, k)


def apply_importance(qvals, ai: ActionImportance | np.ndarray) -> np.ndarray:
    mask = ai.mask if isinstance(ai, ActionImportance) else np.asarray(ai)
    q = np.asarray(qvals, dtype=np.float64)
    if q.shape[-1] != mask.size:
        raise ValueError(f"q-value length {q.shape[-1]} does not match mask length {mask.size}")
    return q + mask


def save_mask(ai: ActionImportance, path: str | Path) -> None:
    n = int(round(np.sqrt(ai.n_actions)))
    with open(path, "w") as fh:
        fh.write(f"# action index a = dest*{n} + source; 0 keeps the action, {MASKED:g} masks it; k={ai.k}\n")
        fh.write("action,source,dest,value\n")
        for a, v in enumerate(ai.mask):
            fh.write(f"{a},{a % n},{a // n},{v:g}\n")


def load_mask(path: str | Path) -> ActionImportance:
    with open(path) as fh:
        first = fh.readline()
    k = int(first.rsplit("k=", 1)[1])
    data = np.loadtxt(path, delimiter=",", skiprows=2, ndmin=2)
    if not np.array_equal(data[:, 0], np.arange(len(data))):
        raise ValueError("mask rows must list every action index in order")
    return ActionImportance(data[:, 3].copy(), k)
