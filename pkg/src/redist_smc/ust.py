"""Uniform spanning trees by Wilson's loop-erased random walk.

Trees live on a subset of a :class:`~redist_smc.graph.Graph`'s nodes.  With a
:class:`~redist_smc.graph.Labeling`, trees are drawn level by level: one tree
inside every unit (finest level first), then a tree on each quotient multigraph
joining the unit trees.  The result is uniform over the trees whose restriction
to every unit is itself a spanning tree.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

from .graph import Graph, GraphError, Labeling, is_connected
from .rng import RngStream, as_stream


@dataclass
class SpanningTree:
    """Rooted spanning tree over a node subset.

    ``parent[root] == -1``.  ``order`` lists nodes so that every parent comes
    before its children; ``subtree_pop[v]`` is the population of ``v`` and all
    of its descendants.
    """

    root: int
    parent: dict[int, int]
    order: list[int]
    subtree_pop: dict[int, int]
    children: dict[int, list[int]] = field(repr=False)

    @property
    def nodes(self) -> list[int]:
        return self.order

    def edges(self) -> list[tuple[int, int]]:
        """Tree edges as ``(child, parent)`` pairs."""
        return [(v, self.parent[v]) for v in self.order if v != self.root]

    def subtree(self, v: int) -> list[int]:
        out = [v]
        stack = [v]
        ch = self.children
        while stack:
            x = stack.pop()
            for c in ch[x]:
                out.append(c)
                stack.append(c)
        return out

    @classmethod
    def from_edges(cls, graph: Graph, nodes: Sequence[int], edges, root: int) -> "SpanningTree":
        nbrs: dict[int, list[int]] = {v: [] for v in nodes}
        for u, v in edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        parent = {root: -1}
        order = [root]
        children: dict[int, list[int]] = {v: [] for v in nodes}
        i = 0
        while i < len(order):
            x = order[i]
            i += 1
            for y in nbrs[x]:
                if y not in parent:
                    parent[y] = x
                    children[x].append(y)
                    order.append(y)
        if len(order) != len(nodes) or len(edges) != len(nodes) - 1:
            raise GraphError("edge set is not a spanning tree of the node set")
        pop = graph.pop
        sub = {v: int(pop[v]) for v in order}
        for v in reversed(order):
            p = parent[v]
            if p >= 0:
                sub[p] += sub[v]
        return cls(root, parent, order, sub, children)


def _wilson(entries: list[list[tuple]], root: int, rng: RngStream) -> list:
    """Wilson's algorithm on a multigraph given as per-vertex entry lists.

    ``entries[s]`` holds ``(t, payload)`` pairs, one per (parallel) edge, so a
    uniform entry choice steps proportionally to multiplicity.  Returns the
    chosen entry for every non-root vertex (``None`` for the root).
    """
    n = len(entries)
    in_tree = [False] * n
    in_tree[root] = True
    nxt: list = [None] * n
    rnd = rng.random
    for start in range(n):
        u = start
        while not in_tree[u]:
            ent = entries[u]
            e = ent[int(rnd() * len(ent))]
            nxt[u] = e
            u = e[0]
        u = start
        while not in_tree[u]:
            in_tree[u] = True
            u = nxt[u][0]
    return nxt


@lru_cache(maxsize=256)
def _local_entries(graph: Graph, nodes: tuple[int, ...]) -> list[list[tuple]]:
    pos = {v: i for i, v in enumerate(nodes)}
    adj = graph.adj
    entries = []
    for v in nodes:
        ent = []
        for u in adj[v]:
            j = pos.get(u)
            if j is not None:
                ent.append((j, u))
        entries.append(ent)
    return entries


def _ust_edges(graph: Graph, nodes: list[int], rng: RngStream) -> list[tuple[int, int]]:
    k = len(nodes)
    if k <= 1:
        return []
    nxt = _wilson(_local_entries(graph, tuple(nodes)), int(rng.random() * k), rng)
    return [(nodes[i], e[1]) for i, e in enumerate(nxt) if e is not None]


def _rooted_ust(graph: Graph, nodes: list[int], rng: RngStream) -> SpanningTree:
    # Wilson's successor pointers already form a tree rooted at its start vertex
    k = len(nodes)
    r = int(rng.random() * k)
    root = nodes[r]
    if k == 1:
        return SpanningTree(root, {root: -1}, [root], {root: int(graph.pop[root])}, {root: []})
    nxt = _wilson(_local_entries(graph, tuple(nodes)), r, rng)
    kids: list[list[int]] = [[] for _ in range(k)]
    for i, e in enumerate(nxt):
        if e is not None:
            kids[e[0]].append(i)
    order_l = [r]
    for i in order_l:
        order_l.extend(kids[i])
    pop = graph.pop
    sub_l = [int(pop[v]) for v in nodes]
    for i in reversed(order_l):
        e = nxt[i]
        if e is not None:
            sub_l[e[0]] += sub_l[i]
    parent = {nodes[i]: (nodes[e[0]] if e is not None else -1) for i, e in enumerate(nxt)}
    order = [nodes[i] for i in order_l]
    sub = {nodes[i]: sub_l[i] for i in range(k)}
    children = {nodes[i]: [nodes[c] for c in kids[i]] for i in range(k)}
    return SpanningTree(root, parent, order, sub, children)


def _hier_edges(graph: Graph, nodes: list[int], labeling: Labeling, depth: int,
                rng: RngStream, check: bool) -> list[tuple[int, int]]:
    if depth >= labeling.n_levels or len(nodes) <= 1:
        return _ust_edges(graph, nodes, rng)
    codes = labeling.codes[depth]
    groups: dict[int, list[int]] = {}
    for v in nodes:
        groups.setdefault(int(codes[v]), []).append(v)
    if len(groups) == 1:
        return _hier_edges(graph, nodes, labeling, depth + 1, rng, check)

    units = sorted(groups)
    edges: list[tuple[int, int]] = []
    for u in units:
        part = groups[u]
        if check and not is_connected(graph, part):
            raise GraphError(
                f"unit {labeling.unit_name(depth, u)!r} at level {labeling.names[depth]!r} "
                "is not connected"
            )
        edges.extend(_hier_edges(graph, part, labeling, depth + 1, rng, check))

    upos = {u: i for i, u in enumerate(units)}
    inside = set(nodes)
    adj = graph.adj
    entries: list[list[tuple]] = [[] for _ in units]
    for v in nodes:
        cv = upos[int(codes[v])]
        for w in adj[v]:
            if w in inside:
                cw = upos[int(codes[w])]
                if cw != cv:
                    entries[cv].append((cw, (v, w)))
    if check and any(not e for e in entries):
        raise GraphError(f"quotient graph at level {labeling.names[depth]!r} is not connected")
    nxt = _wilson(entries, int(rng.random() * len(units)), rng)
    edges.extend(e[1] for e in nxt if e is not None)
    return edges


def sample_ust(graph: Graph, rng=None, nodes: Sequence[int] | None = None,
               check: bool = True) -> SpanningTree:
    """Draw a uniform spanning tree of ``graph`` (or of the subgraph on ``nodes``)."""
    rng = as_stream(rng)
    nodes = list(range(graph.m)) if nodes is None else sorted(int(v) for v in nodes)
    if not nodes:
        raise GraphError("cannot draw a spanning tree of an empty node set")
    if check and not is_connected(graph, nodes):
        raise GraphError("graph is not connected; no spanning tree exists")
    return _rooted_ust(graph, nodes, rng)


def sample_hierarchical_ust(graph: Graph, labeling: Labeling | None, rng=None,
                            nodes: Sequence[int] | None = None, check: bool = True) -> SpanningTree:
    """Draw a tree uniform among those restricting to spanning trees of every unit.

    Quotient-tree edges are realised by a uniform choice among the parallel
    original edges they stand for.  ``labeling=None`` falls back to
    :func:`sample_ust`.
    """
    if labeling is None:
        return sample_ust(graph, rng, nodes, check)
    rng = as_stream(rng)
    nodes = list(range(graph.m)) if nodes is None else sorted(int(v) for v in nodes)
    if not nodes:
        raise GraphError("cannot draw a spanning tree of an empty node set")
    if check and not is_connected(graph, nodes):
        raise GraphError("graph is not connected; no spanning tree exists")
    edges = _hier_edges(graph, nodes, labeling, 0, rng, check)
    root = nodes[int(rng.random() * len(nodes))]
    return SpanningTree.from_edges(graph, nodes, edges, root)
