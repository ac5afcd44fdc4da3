import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_spanning_trees, random_connected_graph, respects_units
from redist_smc.graph import (Graph, GraphError, Labeling, Plan, boundary_count, build_graph,
                              canonical_form, components, graph_from_json, graph_to_json,
                              is_connected, log_spanning_tree_count, log_tau_eta, log_tau_eta_nodes,
                              log_tau_nodes, log_tau_plan, quotient_graph)
from redist_smc.synthetic import grid_graph


def test_rejects_duplicate_ids():
    with pytest.raises(GraphError, match="duplicate"):
        Graph(["a", "a"], [1, 1], [(0, 1)])


def test_rejects_fractional_and_negative_pop():
    with pytest.raises(GraphError):
        Graph(["a", "b"], [1.5, 1], [(0, 1)])
    with pytest.raises(GraphError):
        Graph(["a", "b"], [-1, 1], [(0, 1)])


def test_rejects_self_loop_and_unknown_endpoint():
    with pytest.raises(GraphError, match="self-loop"):
        build_graph([{"id": "a", "pop": 1}], [["a", "a"]])
    with pytest.raises(GraphError, match="unknown"):
        build_graph([{"id": "a", "pop": 1}], [["a", "b"]])


def test_json_round_trip_keeps_attributes_units_and_multiplicity():
    doc = {
        "nodes": [
            {"id": "x", "pop": 3, "attrs": {"dem": 1.0}, "units": {"county": "A"}},
            {"id": "y", "pop": 4, "attrs": {"dem": 2.0}, "units": {"county": "A"}},
            {"id": "z", "pop": 5, "attrs": {"dem": 0.5}, "units": {"county": "B"}},
        ],
        "edges": [["x", "y"], ["y", "z"], ["y", "z"]],
    }
    g = graph_from_json(doc)
    assert g.n_edges == 3
    assert g.adj[g.node("y")].count(g.node("z")) == 2
    g2 = graph_from_json(graph_to_json(g))
    assert g2.ids == g.ids and g2.edges == g.edges
    assert np.array_equal(g2.pop, g.pop)
    assert g2.units == g.units
    assert np.array_equal(g2.attrs["dem"], g.attrs["dem"])


def test_components_and_connectivity():
    g = Graph(list("abcde"), [1] * 5, [(0, 1), (1, 2), (3, 4)])
    assert components(g, range(5)) == [[0, 1, 2], [3, 4]]
    assert not g.connected
    assert is_connected(g, [0, 1, 2])
    assert not is_connected(g, [0, 2])


def test_boundary_count_counts_parallel_edges():
    g = Graph(list("abc"), [1] * 3, [(0, 1), (0, 1), (1, 2)])
    assert boundary_count(g, [0], [1, 2]) == 2
    assert boundary_count(g, [0, 1], [2]) == 1


def test_canonical_form_collapses_relabelings():
    assert canonical_form([2, 2, 0, 1]) == (0, 0, 1, 2)
    assert canonical_form([0, 0, 1, 2]) == canonical_form([1, 1, 2, 0])


@given(st.lists(st.integers(0, 4), min_size=1, max_size=12))
def test_canonical_form_is_idempotent(labels):
    c = canonical_form(labels)
    assert canonical_form(c) == c


def test_plan_mapping_round_trip(grid4x4):
    a = np.array([0] * 8 + [1] * 8)
    plan = Plan(a, 2)
    back = Plan.from_mapping(grid4x4, plan.to_mapping(grid4x4))
    assert np.array_equal(back.assignment, a)
    with pytest.raises(GraphError, match="does not assign"):
        Plan.from_mapping(grid4x4, {"0-0": 1})


@pytest.mark.parametrize("rows,cols,count", [(2, 2, 4), (3, 3, 192), (4, 4, 100352)])
def test_grid_tree_counts_match_known_values(rows, cols, count):
    g = grid_graph(rows, cols, pop=[1] * rows * cols)
    assert math.isclose(log_spanning_tree_count(g), math.log(count), rel_tol=1e-12)


def test_complete_graph_matches_cayley():
    for m in range(2, 8):
        g = Graph([str(i) for i in range(m)], [1] * m, [(u, v) for u in range(m) for v in range(u + 1, m)])
        assert math.isclose(log_spanning_tree_count(g), (m - 2) * math.log(m), abs_tol=1e-12)


def test_tree_count_matches_brute_force_with_parallel_edges():
    rng = random.Random(7)
    for _ in range(20):
        g = random_connected_graph(rng, rng.randint(2, 6), 0.4, multi=True)
        assert math.isclose(log_spanning_tree_count(g), math.log(len(brute_spanning_trees(g))), rel_tol=1e-9)


def test_disconnected_subset_has_zero_trees(grid4x4):
    assert log_tau_nodes(grid4x4, [0, 15]) == -math.inf
    assert log_tau_nodes(grid4x4, [3]) == 0.0


def test_log_tau_plan_sums_districts(grid4x4):
    a = np.array([0, 0, 1, 1] * 4)
    expected = 2 * math.log(len(brute_spanning_trees(grid4x4, [0, 1, 4, 5, 8, 9, 12, 13])))
    assert math.isclose(log_tau_plan(grid4x4, Plan(a, 2)), expected, rel_tol=1e-12)


def test_labeling_rejects_straddling_units():
    g = grid_graph(2, 2, pop=[1] * 4)
    g.units["coarse"] = ("A", "A", "B", "B")
    g.units["fine"] = ("x", "y", "y", "z")
    with pytest.raises(GraphError, match="straddles"):
        Labeling(g, ["coarse", "fine"])


def test_labeling_unknown_level():
    with pytest.raises(GraphError, match="no unit level"):
        Labeling(grid_graph(2, 2, pop=[1] * 4), ["county"])


def test_quotient_graph_keeps_edge_multiplicity():
    g = grid_graph(2, 4, pop=[1] * 8, blocks={"county": (2, 2)})
    q = quotient_graph(g, Labeling(g, ["county"]))
    assert q.m == 2 and q.n_edges == 2
    assert q.pop.tolist() == [4, 4]


@pytest.mark.parametrize("blocks,levels", [
    ({"county": (2, 2)}, ["county"]),
    ({"county": (2, 2), "town": (1, 2)}, ["county", "town"]),
    ({"county": (1, 3)}, ["county"]),
])
def test_tau_eta_matches_brute_force(blocks, levels):
    g = grid_graph(2, 4, pop=[1] * 8, blocks=blocks) if blocks.get("county") != (1, 3) else \
        grid_graph(2, 3, pop=[1] * 6, blocks=blocks)
    lab = Labeling(g, levels)
    trees = brute_spanning_trees(g)
    ok = [t for t in trees if respects_units(g, range(g.m), [g.edges[i] for i in t], lab.codes)]
    assert math.isclose(log_tau_eta(g, lab), math.log(len(ok)), rel_tol=1e-9)


def test_tau_eta_on_subset_with_split_unit():
    g = grid_graph(3, 3, pop=[1] * 9, blocks={"county": (3, 1)})
    lab = Labeling(g, ["county"])
    nodes = [0, 1, 3, 4, 6]
    trees = brute_spanning_trees(g, nodes)
    ok = [t for t in trees if respects_units(g, nodes, [g.edges[i] for i in t], lab.codes)]
    assert math.isclose(log_tau_eta_nodes(g, nodes, lab), math.log(len(ok)), rel_tol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10**6))
def test_tau_is_at_least_tau_eta(seed):
    rng = random.Random(seed)
    g = random_connected_graph(rng, 6, 0.5)
    labels = [rng.choice("AB") for _ in range(6)]
    g.units["u"] = tuple(labels)
    lab = Labeling(g, ["u"])
    assert log_tau_eta(g, lab) <= log_spanning_tree_count(g) + 1e-9
