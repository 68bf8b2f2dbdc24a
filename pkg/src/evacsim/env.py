"""Fire-evacuation MDP with a reset/step/render contract.

An action ``a`` in ``[0, n*n)`` moves one person from room ``a % n`` to room
``a // n``. Rewards decay exponentially with the fire-spread degree of the
destination; exit moves pay a constant +10.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .building import BuildingGraph

EXIT_REWARD = 10.0
ILLEGAL_FACTOR = 2.0
BOTTLENECK_FACTOR = 0.5
REWARD_FLOOR = -1e6

BRANCHES = ("ignored", "exit", "illegal", "bottleneck", "move")


def decode_action(a: int, n: int) -> tuple[int, int]:
    """Return ``(source, dest)`` for action index ``a``."""
    if not 0 <= a < n * n:
        raise ValueError(f"action {a} out of range for {n} rooms")
    return a % n, a // n


def encode_action(source: int, dest: int, n: int) -> int:
    return dest * n + source


def _penalty(coef: float, d: float, t: int, floor: float) -> float:
    # -coef * d**t clamped at floor, without overflowing for large t
    if d == 0.0 or coef == 0.0:
        return -0.0
    if t * math.log(d) + math.log(coef) >= math.log(-floor):
        return floor
    return max(-coef * d**t, floor)


def reward_decay(d: float, t: int, floor: float = REWARD_FLOOR) -> float:
    """-(d ** t), clamped below at ``floor``."""
    return _penalty(1.0, d, t, floor)


@dataclass
class EvacState:
    occupancy: np.ndarray
    clock: int
    degrees: np.ndarray

    def copy(self) -> EvacState:
        return EvacState(self.occupancy.copy(), self.clock, self.degrees.copy())

    @property
    def people(self) -> int:
        return int(self.occupancy.sum())


@dataclass
class StepOutcome:
    next_state: EvacState
    reward: float
    terminal: bool
    branch: str = ""


@dataclass
class FireEvacuationEnv:
    """Stateful environment instance; one per thread."""

    graph: BuildingGraph
    reward_floor: float = REWARD_FLOOR
    record: bool = False
    uncertainty: float | None = None
    state: EvacState = field(init=False)
    trajectory: list[tuple] = field(init=False, default_factory=list)

    def __post_init__(self) -> None:
        if self.uncertainty is None:
            self.uncertainty = self.graph.uncertainty
        if not 0.0 <= self.uncertainty < 1.0:
            raise ValueError(f"uncertainty must lie in [0, 1), got {self.uncertainty}")
        self.rng = np.random.default_rng()
        self._adj = self.graph.adjacency.astype(bool)
        self._exit = np.zeros(self.graph.n, dtype=bool)
        self._exit[list(self.graph.exits)] = True
        self.reset()

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def n_actions(self) -> int:
        return self.graph.n * self.graph.n

    @property
    def terminal(self) -> bool:
        return self.state.people == 0

    def seed(self, seed: int | None) -> None:
        self.rng = np.random.default_rng(seed)

    def reset(self, seed: int | None = None) -> EvacState:
        """Restore the initial conditions; reseed the PRNG when ``seed`` is given."""
        if seed is not None:
            self.seed(seed)
        g = self.graph
        self.state = EvacState(
            occupancy=g.occupancy0.astype(np.int64).copy(),
            clock=0,
            degrees=g.degree0.astype(np.float64).copy(),
        )
        self.trajectory = []
        return self.state.copy()

    def render(self) -> EvacState:
        return self.state.copy()

    def step(self, a: int) -> StepOutcome:
        if self.terminal:
            raise RuntimeError("step() called on a terminal environment; call reset()")
        src, dst = decode_action(int(a), self.n)
        st = self.state
        st.clock += 1
        t = st.clock
        occ = st.occupancy
        floor = self.reward_floor

        u = self.rng.random()
        if u < self.uncertainty:
            branch = "ignored"
            reward = reward_decay(st.degrees[dst], t, floor)
        elif self._adj[src, dst] and self._exit[dst] and occ[src] > 0:
            branch = "exit"
            reward = EXIT_REWARD
            occ[src] -= 1
        elif not self._adj[src, dst] or occ[src] == 0:
            branch = "illegal"
            reward = _penalty(ILLEGAL_FACTOR, st.degrees.max(), t, floor)
        elif occ[dst] >= self.graph.bottleneck:
            branch = "bottleneck"
            reward = _penalty(BOTTLENECK_FACTOR, st.degrees.max(), t, floor)
        else:
            branch = "move"
            reward = reward_decay(st.degrees[dst], t, floor)
            occ[src] -= 1
            occ[dst] += 1

        # closed form keeps degrees == degree0 + t * delta exactly
        st.degrees = self.graph.degree0 + t * self.graph.delta
        done = st.people == 0
        if self.record:
            self.trajectory.append((t, int(a), src, dst, branch, float(reward), done))
        return StepOutcome(st.copy(), float(reward), done, branch)

    def write_trajectory(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "action", "source", "dest", "branch", "reward", "terminal"])
            for row in self.trajectory:
                w.writerow([*row[:5], repr(row[5]), int(row[6])])

    def encode(self, state: EvacState | np.ndarray, raw: bool = False) -> np.ndarray:
        """Network input: occupancy scaled by the bottleneck (or raw counts)."""
        occ = state.occupancy if isinstance(state, EvacState) else state
        x = np.asarray(occ, dtype=np.float64)
        return x if raw else x / self.graph.bottleneck
