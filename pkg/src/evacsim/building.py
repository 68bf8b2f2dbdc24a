"""Static building model: rooms, directed adjacency, exits, fire parameters.

Configs list undirected edges. They are expanded symmetrically, except that an
edge touching an exit only points *into* the exit, so exit rows stay all-zero.
"""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

SHIPPED_CONFIGS = ("fig2", "fig12", "uia91")


class ConfigError(ValueError):
    """A building config violates the schema or an invariant."""


class UnreachableRoomError(ConfigError):
    """Some non-exit room has no path to any exit."""


@dataclass(frozen=True, eq=False)
class BuildingGraph:
    n: int
    adjacency: np.ndarray  # (n, n) int8, row = source room
    exits: frozenset[int]
    fires: frozenset[int]
    degree0: np.ndarray
    delta: np.ndarray
    bottleneck: int
    occupancy0: np.ndarray
    uncertainty: float = 0.1

    def __post_init__(self) -> None:
        for name in ("adjacency", "degree0", "delta", "occupancy0"):
            getattr(self, name).setflags(write=False)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, BuildingGraph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self.adjacency, other.adjacency)
            and self.exits == other.exits
            and self.fires == other.fires
            and np.array_equal(self.degree0, other.degree0)
            and np.array_equal(self.delta, other.delta)
            and self.bottleneck == other.bottleneck
            and np.array_equal(self.occupancy0, other.occupancy0)
            and self.uncertainty == other.uncertainty
        )

    __hash__ = None  # type: ignore[assignment]

    @property
    def n_actions(self) -> int:
        return self.n * self.n

    @property
    def non_exits(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.exits]

    def is_exit(self, room: int) -> bool:
        return room in self.exits

    def has_edge(self, src: int, dst: int) -> bool:
        return bool(self.adjacency[src, dst])

    def as_dict(self) -> dict[int, list[int]]:
        """Sparse form: room -> ascending list of rooms it connects to."""
        return {i: neighbors(self, i) for i in range(self.n)}

    def with_uncertainty(self, p: float) -> BuildingGraph:
        if not 0.0 <= p < 1.0:
            raise ConfigError(f"uncertainty: must lie in [0, 1), got {p}")
        return BuildingGraph(
            n=self.n,
            adjacency=self.adjacency,
            exits=self.exits,
            fires=self.fires,
            degree0=self.degree0,
            delta=self.delta,
            bottleneck=self.bottleneck,
            occupancy0=self.occupancy0,
            uncertainty=float(p),
        )

    def validate(self) -> None:
        """Raise ConfigError naming the offending field and rule."""
        n = self.n
        adj = self.adjacency
        if adj.shape != (n, n):
            raise ConfigError(f"adjacency: expected shape ({n}, {n}), got {adj.shape}")
        if not np.isin(adj, (0, 1)).all():
            raise ConfigError("adjacency: entries must be exactly 0 or 1")
        if np.diagonal(adj).any():
            raise ConfigError("adjacency: diagonal must be zero (no self-loops)")
        for name, rooms in (("exits", self.exits), ("fires", self.fires)):
            bad = [r for r in rooms if not 0 <= r < n]
            if bad:
                raise ConfigError(f"{name}: room index out of range: {bad}")
        if not self.exits:
            raise ConfigError("exits: at least one exit is required")
        for e in sorted(self.exits):
            if adj[e].any():
                raise ConfigError(f"adjacency: exit row must be zero (exit {e})")
        if self.fires & self.exits:
            raise ConfigError(f"fires: an exit cannot be a fire room: {sorted(self.fires & self.exits)}")

        for name in ("degree0", "delta", "occupancy0"):
            arr = getattr(self, name)
            if arr.shape != (n,):
                raise ConfigError(f"{name}: expected {n} entries, got {arr.shape[0]}")
        if not np.isfinite(self.degree0).all() or (self.degree0 < 0).any():
            raise ConfigError("degree0: entries must be finite and non-negative")
        if not np.isfinite(self.delta).all() or ((self.delta < 0) | (self.delta > 1)).any():
            raise ConfigError("delta: entries must lie in [0, 1]")
        for e in sorted(self.exits):
            if self.degree0[e] != 0 or self.delta[e] != 0:
                raise ConfigError(f"degree0/delta: exit {e} must have zero degree and zero delta")
        top = self.degree0.max()
        for f in sorted(self.fires):
            if self.degree0[f] != top:
                raise ConfigError(f"degree0: fire room {f} must carry the maximum degree {top}")

        if self.bottleneck < 1:
            raise ConfigError(f"bottleneck: must be a positive integer, got {self.bottleneck}")
        if (self.occupancy0 < 0).any():
            raise ConfigError("occupancy0: counts must be non-negative")
        for e in sorted(self.exits):
            if self.occupancy0[e] != 0:
                raise ConfigError(f"occupancy0: exit {e} must start empty")
        over = np.flatnonzero(self.occupancy0 > self.bottleneck)
        if over.size:
            i = int(over[0])
            raise ConfigError(
                f"occupancy0: occupancy exceeds bottleneck (room {i} has "
                f"{int(self.occupancy0[i])} > {self.bottleneck})"
            )
        if not 0.0 <= self.uncertainty < 1.0:
            raise ConfigError(f"uncertainty: must lie in [0, 1), got {self.uncertainty}")

        if self.non_exits and not any(adj[i, e] for i in self.non_exits for e in self.exits):
            raise UnreachableRoomError("edges: no non-exit room has an edge into an exit")
        dist = exit_distances(self)
        stranded = [i for i in self.non_exits if dist[i] < 0]
        if stranded:
            raise UnreachableRoomError(f"edges: rooms {stranded} cannot reach any exit")


def neighbors(g: BuildingGraph, room: int) -> list[int]:
    if not 0 <= room < g.n:
        raise IndexError(f"room {room} out of range for {g.n} rooms")
    return [int(j) for j in np.flatnonzero(g.adjacency[room])]


def max_degree(g: BuildingGraph) -> int:
    """Largest out-degree over non-exit rooms (default k for action reduction)."""
    return max((int(g.adjacency[i].sum()) for i in g.non_exits), default=0)


def exit_distances(g: BuildingGraph) -> np.ndarray:
    """Hop count from every room to its nearest exit; -1 if unreachable.

    Multi-source BFS over reversed edges, starting from all exits at once.
    """
    dist = np.full(g.n, -1, dtype=np.int64)
    queue = deque(sorted(g.exits))
    for e in queue:
        dist[e] = 0
    incoming = g.adjacency.T
    while queue:
        j = queue.popleft()
        for i in np.flatnonzero(incoming[j]):
            if dist[i] < 0:
                dist[i] = dist[j] + 1
                queue.append(int(i))
    return dist


def min_evacuation_steps(g: BuildingGraph) -> int:
    """Occupancy-weighted shortest-path lower bound on steps to empty the building."""
    dist = exit_distances(g)
    return int(sum(int(g.occupancy0[i]) * int(dist[i]) for i in g.non_exits))


def _expand_edges(n: int, edges: list, exits: set[int]) -> np.ndarray:
    adj = np.zeros((n, n), dtype=np.int8)
    for edge in edges:
        if not (isinstance(edge, (list, tuple)) and len(edge) == 2):
            raise ConfigError(f"edges: each edge must be a pair, got {edge!r}")
        i, j = (_as_int(v, "edges") for v in edge)
        if not (0 <= i < n and 0 <= j < n):
            raise ConfigError(f"edges: room index out of range in {edge!r}")
        if i == j:
            raise ConfigError(f"edges: self-loop on room {i}")
        if j in exits and i not in exits:
            adj[i, j] = 1
        elif i in exits and j not in exits:
            adj[j, i] = 1
        else:
            adj[i, j] = adj[j, i] = 1
    return adj


def _as_int(value, field: str) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{field}: expected an integer, got {value!r}")
    return value


def _as_int_list(doc: dict, field: str) -> list[int]:
    raw = doc[field]
    if not isinstance(raw, list):
        raise ConfigError(f"{field}: expected a list")
    return [_as_int(v, field) for v in raw]


def _as_float_array(doc: dict, field: str) -> np.ndarray:
    raw = doc[field]
    if not isinstance(raw, list) or not all(
        isinstance(v, (int, float)) and not isinstance(v, bool) for v in raw
    ):
        raise ConfigError(f"{field}: expected a list of numbers")
    return np.array(raw, dtype=np.float64)


_REQUIRED = ("rooms", "exits", "fires", "degree0", "delta", "bottleneck", "occupancy0", "uncertainty")


def from_dict(doc: dict) -> BuildingGraph:
    if not isinstance(doc, dict):
        raise ConfigError("config: top level must be a JSON object")
    missing = [k for k in _REQUIRED if k not in doc]
    if missing:
        raise ConfigError(f"config: missing fields {missing}")
    n = _as_int(doc["rooms"], "rooms")
    if n < 1:
        raise ConfigError(f"rooms: must be positive, got {n}")
    exits = set(_as_int_list(doc, "exits"))
    if "adjacency" in doc:
        adjacency = np.array(doc["adjacency"])
        if adjacency.shape != (n, n) or adjacency.dtype.kind not in "iub":
            raise ConfigError(f"adjacency: expected an {n}x{n} integer matrix")
        adjacency = adjacency.astype(np.int8) if np.isin(adjacency, (0, 1)).all() else adjacency
    elif "edges" in doc:
        if not isinstance(doc["edges"], list):
            raise ConfigError("edges: expected a list of pairs")
        adjacency = _expand_edges(n, doc["edges"], exits)
    else:
        raise ConfigError("config: one of 'edges' or 'adjacency' is required")
    uncertainty = doc["uncertainty"]
    if isinstance(uncertainty, bool) or not isinstance(uncertainty, (int, float)):
        raise ConfigError("uncertainty: expected a real number")

    g = BuildingGraph(
        n=n,
        adjacency=adjacency,
        exits=frozenset(exits),
        fires=frozenset(_as_int_list(doc, "fires")),
        degree0=_as_float_array(doc, "degree0"),
        delta=_as_float_array(doc, "delta"),
        bottleneck=_as_int(doc["bottleneck"], "bottleneck"),
        occupancy0=np.array(_as_int_list(doc, "occupancy0"), dtype=np.int64),
        uncertainty=float(uncertainty),
    )
    g.validate()
    return g


def load_config(text: str) -> BuildingGraph:
    """Parse and validate a JSON building config."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config: not valid JSON ({exc})") from exc
    return from_dict(doc)


def to_dict(g: BuildingGraph) -> dict:
    adj = g.adjacency
    edges: list[list[int]] = []
    representable = True
    for i in range(g.n):
        for j in range(g.n):
            if not adj[i, j]:
                continue
            if j in g.exits:
                edges.append([i, j])
            elif i < j:
                if not adj[j, i]:
                    representable = False
                edges.append([i, j])
            elif not adj[j, i]:
                representable = False
    doc: dict = {"rooms": g.n}
    if representable:
        doc["edges"] = edges
    else:
        doc["adjacency"] = adj.astype(int).tolist()
    doc.update(
        exits=sorted(g.exits),
        fires=sorted(g.fires),
        degree0=[float(v) for v in g.degree0],
        delta=[float(v) for v in g.delta],
        bottleneck=int(g.bottleneck),
        occupancy0=[int(v) for v in g.occupancy0],
        uncertainty=float(g.uncertainty),
    )
    return doc


def dump_config(g: BuildingGraph) -> str:
    """Canonical JSON text: one top-level key per line, compact values."""
    doc = to_dict(g)
    lines = [f"  {json.dumps(k)}: {json.dumps(v, separators=(', ', ': '))}" for k, v in doc.items()]
    return "{\n" + ",\n".join(lines) + "\n}\n"


def read_config(path_or_name: str | Path) -> BuildingGraph:
    """Load a config from a path, or one of the shipped configs by name."""
    name = str(path_or_name)
    if name in SHIPPED_CONFIGS or name.removesuffix(".json") in SHIPPED_CONFIGS and not Path(name).exists():
        return load_config(shipped_config_text(name.removesuffix(".json")))
    return load_config(Path(path_or_name).read_text())


def shipped_config_text(name: str) -> str:
    return resources.files("evacsim.configs").joinpath(f"{name}.json").read_text()
