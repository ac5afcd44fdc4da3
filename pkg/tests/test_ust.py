from collections import Counter

import pytest
from scipy.stats import chisquare

from conftest import brute_spanning_trees, respects_units
from redist_smc.graph import Graph, GraphError, Labeling
from redist_smc.rng import RngStream
from redist_smc.synthetic import grid_graph
from redist_smc.ust import SpanningTree, sample_hierarchical_ust, sample_ust


def _key(tree: SpanningTree):
    return frozenset((min(a, b), max(a, b)) for a, b in tree.edges())


def _complete(m):
    return Graph([str(i) for i in range(m)], [1] * m, [(u, v) for u in range(m) for v in range(u + 1, m)])


UNIFORMITY_CASES = {
    "triangle": _complete(3),
    "4-cycle": Graph(list("abcd"), [1] * 4, [(0, 1), (1, 2), (2, 3), (3, 0)]),
    "K4": _complete(4),
}


def chi2_uniform(graph, draw, trees, per_tree=200):
    keys = [frozenset(graph.edges[i] for i in t) for t in trees]
    counts = Counter(draw() for _ in range(per_tree * len(trees)))
    assert set(counts) <= set(keys), "sampler produced a non-tree"
    return chisquare([counts.get(k, 0) for k in keys]).pvalue


@pytest.mark.parametrize("name", sorted(UNIFORMITY_CASES))
def test_wilson_is_uniform(name):
    g = UNIFORMITY_CASES[name]
    rng = RngStream(11, (len(name),))
    trees = brute_spanning_trees(g)
    p = chi2_uniform(g, lambda: _key(sample_ust(g, rng)), trees)
    assert p > 0.001


def test_hierarchical_sampler_is_uniform_over_unit_respecting_trees():
    g = grid_graph(2, 3, pop=[1] * 6, blocks={"county": (2, 2)})
    lab = Labeling(g, ["county"])
    trees = [t for t in brute_spanning_trees(g)
             if respects_units(g, range(g.m), [g.edges[i] for i in t], lab.codes)]
    assert len(trees) == 8
    rng = RngStream(5)
    p = chi2_uniform(g, lambda: _key(sample_hierarchical_ust(g, lab, rng)), trees)
    assert p > 0.001


def test_subtree_populations_and_order():
    g = grid_graph(3, 3, seed=4)
    t = sample_ust(g, RngStream(1))
    assert t.subtree_pop[t.root] == g.total_pop
    seen = set()
    for v in t.order:
        if v != t.root:
            assert t.parent[v] in seen
        seen.add(v)
    for v in t.order:
        assert t.subtree_pop[v] == sum(int(g.pop[u]) for u in t.subtree(v))


def test_tree_on_node_subset():
    g = grid_graph(3, 3, pop=[1] * 9)
    nodes = [0, 1, 2, 5, 8]
    t = sample_ust(g, RngStream(2), nodes)
    assert sorted(t.order) == nodes and len(t.edges()) == 4


def test_same_stream_gives_same_tree():
    g = grid_graph(4, 4, seed=1)
    assert _key(sample_ust(g, RngStream(3, (1, 2)))) == _key(sample_ust(g, RngStream(3, (1, 2))))


def test_disconnected_input_is_rejected():
    g = Graph(list("abc"), [1] * 3, [(0, 1)])
    with pytest.raises(GraphError, match="not connected"):
        sample_ust(g, RngStream(0))


def test_disconnected_unit_is_named():
    g = grid_graph(1, 3, pop=[1] * 3)
    g.units["county"] = ("A", "B", "A")
    with pytest.raises(GraphError, match="'A'"):
        sample_hierarchical_ust(g, Labeling(g, ["county"]), RngStream(0))


def test_from_edges_rejects_non_tree():
    g = grid_graph(2, 2, pop=[1] * 4)
    with pytest.raises(GraphError):
        SpanningTree.from_edges(g, [0, 1, 2, 3], [(0, 1), (1, 3), (3, 2), (2, 0)], 0)
