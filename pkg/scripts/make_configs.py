"""Regenerate the shipped building configs under src/evacsim/configs/.

fig2   -- the 5-room toy building (adjacency printed with the method).
fig12  -- 8 rooms, one exit, two fires; weighted shortest-path bound is 110.
uia91  -- synthetic stand-in for the 91-room four-block campus floor:
          10 exits, fires in rooms 14/29/59/80, max out-degree 9.

Run:  python scripts/make_configs.py
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from evacsim.building import dump_config, from_dict, max_degree, min_evacuation_steps

OUT = Path(__file__).resolve().parents[1] / "src" / "evacsim" / "configs"


def fig2() -> dict:
    return {
        "rooms": 5,
        "edges": [[0, 1], [0, 2], [0, 3], [1, 2], [1, 3], [2, 4], [3, 4]],
        "exits": [4],
        "fires": [2],
        "degree0": [1.0, 1.0, 2.0, 1.0, 0.0],
        "delta": [0.2, 0.05, 0.0, 0.1, 0.0],
        "bottleneck": 10,
        "occupancy0": [10, 10, 10, 10, 0],
        "uncertainty": 0.1,
    }


def fig12() -> dict:
    # rooms 4, 5, 6 open onto the exit (7); rooms 0-3 are one hop further in
    edges = [
        [0, 1], [0, 4], [1, 4], [1, 5], [2, 3], [2, 5], [2, 6], [3, 6],
        [4, 5], [5, 6], [4, 7], [5, 7], [6, 7],
    ]
    return {
        "rooms": 8,
        "edges": edges,
        "exits": [7],
        "fires": [1, 6],
        "degree0": [1.0, 2.0, 1.0, 1.0, 1.0, 1.0, 2.0, 0.0],
        "delta": [0.1, 0.0, 0.1, 0.2, 0.15, 0.05, 0.0, 0.0],
        "bottleneck": 10,
        "occupancy0": [10, 10, 10, 10, 10, 10, 10, 0],
        "uncertainty": 0.1,
    }


# Each block: a corridor chain; offices hang off corridor nodes; a few offices
# have a connecting door to the next office. Blocks join corridor-to-corridor.
BLOCKS = {
    # name: (first index, corridor nodes, office count, exits at corridor positions)
    "A": (0, 6, 16, (0, 5)),
    "B": (24, 6, 16, (0, 5)),
    "C": (48, 5, 15, (0, 2, 4)),
    "D": (71, 5, 12, (0, 2, 4)),
}
FIRES = (14, 29, 59, 80)


def uia91() -> dict:
    rng = np.random.default_rng(2019)
    edges: set[tuple[int, int]] = set()
    exits: list[int] = []
    corridors: dict[str, list[int]] = {}
    nxt = 0
    for name, (start, n_corr, n_off, exit_pos) in BLOCKS.items():
        assert nxt == start, (name, nxt)
        corr = list(range(nxt, nxt + n_corr))
        nxt += n_corr
        corridors[name] = corr
        for a, b in zip(corr, corr[1:]):
            edges.add((a, b))
        offices = list(range(nxt, nxt + n_off))
        nxt += n_off
        for k, room in enumerate(offices):
            edges.add((corr[k * n_corr // n_off], room))
            if k % 3 == 1 and k + 1 < n_off:
                edges.add((room, offices[k + 1]))
        for pos in exit_pos:
            exits.append(nxt)
            edges.add((corr[pos], nxt))
            nxt += 1
    assert nxt == 91, nxt

    # inter-block links; A[3] is the central atrium and the unique degree-9 room
    A, B, C, D = (corridors[k] for k in "ABCD")
    edges |= {(B[4], C[1]), (C[3], D[1]), (D[3], A[4])}
    edges |= {(A[3], B[2]), (A[3], B[3]), (A[3], C[2]), (A[3], D[2])}

    n = 91
    degree0 = np.ones(n)
    delta = np.zeros(n)
    adj_und = {i: set() for i in range(n)}
    for a, b in edges:
        adj_und[a].add(b)
        adj_und[b].add(a)
    for f in FIRES:
        degree0[f] = 2.0
        cand = sorted(j for j in adj_und[f] if j not in exits and j not in FIRES)
        for j in rng.permutation(cand)[:2]:
            delta[j] = max(delta[j], round(float(rng.uniform(0.05, 0.3)), 2))
    for e in exits:
        degree0[e] = 0.0
        delta[e] = 0.0

    occupancy = np.zeros(n, dtype=int)
    for name, (start, n_corr, n_off, _) in BLOCKS.items():
        for room in range(start + n_corr, start + n_corr + n_off):
            occupancy[room] = 1 if room % 2 == 0 else 0

    return {
        "rooms": n,
        "edges": sorted([list(e) for e in edges]),
        "exits": sorted(exits),
        "fires": list(FIRES),
        "degree0": degree0.tolist(),
        "delta": delta.tolist(),
        "bottleneck": 10,
        "occupancy0": occupancy.tolist(),
        "uncertainty": 0.1,
    }


def main() -> None:
    OUT.mkdir(parents=True, exist_ok=True)
    for name, build in (("fig2", fig2), ("fig12", fig12), ("uia91", uia91)):
        g = from_dict(build())
        (OUT / f"{name}.json").write_text(dump_config(g))
        print(
            f"{name}: n={g.n} exits={sorted(g.exits)} fires={sorted(g.fires)} "
            f"max_degree={max_degree(g)} min_steps={min_evacuation_steps(g)} "
            f"people={int(g.occupancy0.sum())}"
        )


if __name__ == "__main__":
    main()
