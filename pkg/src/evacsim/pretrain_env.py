"""Shortest-path pretraining instance: graph structure only.

One agent walks from a random non-exit room towards any exit. The action is
the destination room, so the tabular Q-matrix is n x n with rows indexed by
the current room. No people, fire, bottleneck or action uncertainty.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .building import BuildingGraph

EXIT_REWARD = 1.0
ILLEGAL_REWARD = -10.0
MOVE_REWARD = -1.0


def transition_reward(g: BuildingGraph, room: int, dest: int) -> float:
    """Immediate pretraining reward for moving ``room -> dest`` (pure)."""
    if g.adjacency[room, dest]:
        return EXIT_REWARD if dest in g.exits else MOVE_REWARD
    return ILLEGAL_REWARD


@dataclass
class PretrainState:
    position: int


class ShortestPathEnv:
    def __init__(self, graph: BuildingGraph, max_steps: int | None = None):
        self.graph = graph
        self.max_steps = 50 * graph.n if max_steps is None else max_steps
        self.rng = np.random.default_rng()
        self._starts = np.array(graph.non_exits, dtype=np.int64)
        self.position = -1
        self.steps = 0
        self.done = True

    @property
    def truncated(self) -> bool:
        return not self.done and self.steps >= self.max_steps

    def reset(self, seed: int | None = None) -> PretrainState:
        if self._starts.size == 0:
            raise ValueError("pretraining needs at least one non-exit room")
        if seed is not None:
            self.rng = np.random.default_rng(seed)
        self.position = int(self._starts[self.rng.integers(self._starts.size)])
        self.steps = 0
        self.done = False
        return PretrainState(self.position)

    def place(self, room: int) -> PretrainState:
        """Put the walker in ``room`` to probe single steps (one-step simulation).

        Exits are accepted here: every move out of an exit is illegal.
        """
        if not 0 <= room < self.graph.n:
            raise ValueError(f"room {room} out of range")
        self.position = room
        self.steps = 0
        self.done = False
        return PretrainState(room)

    def step(self, dest: int) -> tuple[PretrainState, float, bool]:
        if self.done:
            raise RuntimeError("step() after the episode reached an exit; call reset()")
        if not 0 <= dest < self.graph.n:
            raise ValueError(f"destination {dest} out of range")
        self.steps += 1
        reward = transition_reward(self.graph, self.position, dest)
        if reward == EXIT_REWARD:
            self.done = True
            self.position = dest
        elif reward == MOVE_REWARD:
            self.position = dest
        return PretrainState(self.position), reward, self.done


def pretrain_reset(g: BuildingGraph, seed: int) -> tuple[ShortestPathEnv, PretrainState]:
    env = ShortestPathEnv(g)
    return env, env.reset(seed)
