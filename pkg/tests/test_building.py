from __future__ import annotations

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from evacsim.building import (
    ConfigError,
    UnreachableRoomError,
    dump_config,
    exit_distances,
    load_config,
    max_degree,
    min_evacuation_steps,
    neighbors,
    read_config,
    shipped_config_text,
    to_dict,
)

from conftest import bfs_oracle, make_graph, random_connected_graph

# adjacency of the five-room toy building, row = source room
FIG2_MATRIX = np.array([
    [0, 1, 1, 1, 0],
    [1, 0, 1, 1, 0],
    [1, 1, 0, 0, 1],
    [1, 1, 0, 0, 1],
    [0, 0, 0, 0, 0],
])


def fig2_doc() -> dict:
    return json.loads(shipped_config_text("fig2"))


def test_fig2_matches_printed_matrix(fig2):
    assert fig2.n == 5
    assert np.array_equal(fig2.adjacency, FIG2_MATRIX)
    assert fig2.exits == {4} and fig2.fires == {2}
    assert fig2.occupancy0.tolist() == [10, 10, 10, 10, 0]
    assert fig2.bottleneck == 10


def test_adjacency_form_loads_same_graph(fig2):
    doc = fig2_doc()
    del doc["edges"]
    doc["adjacency"] = FIG2_MATRIX.tolist()
    assert load_config(json.dumps(doc)) == fig2


def test_occupancy_over_bottleneck_rejected():
    doc = fig2_doc()
    doc["occupancy0"] = [11, 10, 10, 10, 0]
    with pytest.raises(ConfigError, match="occupancy exceeds bottleneck"):
        load_config(json.dumps(doc))


def test_exit_row_must_be_zero():
    doc = fig2_doc()
    del doc["edges"]
    m = FIG2_MATRIX.copy()
    m[4, 2] = 1
    doc["adjacency"] = m.tolist()
    with pytest.raises(ConfigError, match="exit row must be zero"):
        load_config(json.dumps(doc))


@pytest.mark.parametrize(
    "field, value, message",
    [
        ("delta", [0.2, 0.05, 0.0, 1.5, 0.0], "delta"),
        ("degree0", [3.0, 1.0, 2.0, 1.0, 0.0], "fire room"),
        ("uncertainty", 1.0, "uncertainty"),
        ("occupancy0", [10, 10, 10, 10, 1], "start empty"),
        ("bottleneck", 0, "bottleneck"),
    ],
)
def test_invariant_violations_name_the_field(field, value, message):
    doc = fig2_doc()
    doc[field] = value
    with pytest.raises(ConfigError, match=message):
        load_config(json.dumps(doc))


def test_malformed_json_is_config_error():
    with pytest.raises(ConfigError):
        load_config("{not json")


def test_unreachable_room_has_its_own_error():
    # room 2 only links to room 3, neither reaches the exit
    with pytest.raises(UnreachableRoomError):
        make_graph(5, [(0, 1), (1, 4), (2, 3)], exits=[4])


@pytest.mark.parametrize("room, expected", [(0, [1, 2, 3]), (4, []), (2, [0, 1, 4])])
def test_neighbors_fig2(fig2, room, expected):
    assert neighbors(fig2, room) == expected


def test_neighbors_out_of_range(fig2):
    with pytest.raises(IndexError):
        neighbors(fig2, 5)


def test_max_degree_examples(fig2, uia91):
    assert max_degree(fig2) == 3
    complete = make_graph(4, [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)], exits=[3])
    assert max_degree(complete) == 3
    assert max_degree(uia91) == 9


def test_shipped_uia91_shape(uia91):
    assert uia91.n == 91
    assert len(uia91.exits) == 10
    assert uia91.fires == {14, 29, 59, 80}


def test_fig12_bound(fig12):
    assert fig12.occupancy0.tolist() == [10] * 7 + [0]
    assert min_evacuation_steps(fig12) == 110


@pytest.mark.parametrize("name", ["fig2", "fig12", "uia91"])
def test_round_trip_is_bit_exact(name):
    text = shipped_config_text(name)
    g = load_config(text)
    assert dump_config(g) == text
    assert load_config(dump_config(g)) == g


def test_round_trip_through_file(tmp_path, fig2):
    path = tmp_path / "b.json"
    path.write_text(dump_config(fig2))
    assert read_config(path) == fig2


def test_asymmetric_adjacency_serialises_as_matrix():
    doc = fig2_doc()
    del doc["edges"]
    m = FIG2_MATRIX.copy()
    m[1, 0] = 0  # one-way corridor 0 -> 1
    doc["adjacency"] = m.tolist()
    g = load_config(json.dumps(doc))
    assert "adjacency" in to_dict(g)
    assert load_config(dump_config(g)) == g


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000), n=st.integers(3, 30), n_exits=st.integers(1, 2))
def test_distances_match_forward_bfs(seed, n, n_exits):
    g = random_connected_graph(np.random.default_rng(seed), n, n_exits)
    oracle = bfs_oracle(np.asarray(g.adjacency), g.exits)
    dist = exit_distances(g)
    assert all(dist[i] == d for i, d in oracle.items())
    assert max_degree(g) == max(len(neighbors(g, i)) for i in g.non_exits)


def test_graph_is_immutable(fig2):
    with pytest.raises(ValueError):
        fig2.adjacency[0, 4] = 1
