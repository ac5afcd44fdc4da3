"""Adjacency graphs, plans, administrative labelings and spanning-tree counts.

Nodes are stored by integer index ``0..m-1``; the original string ids are kept
in ``Graph.ids``.  Edges form a multigraph: a pair listed twice counts as two
parallel edges everywhere (Laplacian weights, boundary counts, tree sampling).
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

NEG_INF = float("-inf")


class GraphError(ValueError):
    """Raised for malformed graph, plan or labeling input."""


class Graph:
    """Undirected multigraph with integer node populations.

    Parameters
    ----------
    ids : sequence of str
        Unique node identifiers.
    pop : sequence of int
        Nonnegative integer population per node.
    edges : iterable of (int, int)
        Node-index pairs; repeated pairs encode multiplicity.
    attrs : mapping of str to array-like, optional
        Named numeric node attributes (vote counts, group counts, ...).
    units : mapping of str to sequence of str, optional
        Administrative unit label per node for each named level.
    """

    def __init__(self, ids, pop, edges, attrs=None, units=None):
        self.ids = tuple(str(i) for i in ids)
        self.m = len(self.ids)
        if len(set(self.ids)) != self.m:
            seen = set()
            dup = next(i for i in self.ids if i in seen or seen.add(i))
            raise GraphError(f"duplicate node id {dup!r}")
        self.index = {nid: k for k, nid in enumerate(self.ids)}

        pop = list(pop)
        if len(pop) != self.m:
            raise GraphError("population vector length does not match node count")
        for nid, p in zip(self.ids, pop):
            if isinstance(p, bool) or not float(p).is_integer() or p < 0:
                raise GraphError(f"population of node {nid!r} must be a nonnegative integer, got {p!r}")
        self.pop = np.asarray([int(p) for p in pop], dtype=np.int64)
        self.total_pop = int(sum(int(p) for p in pop))

        norm = []
        for u, v in edges:
            u, v = int(u), int(v)
            if not (0 <= u < self.m and 0 <= v < self.m):
                raise GraphError(f"edge ({u}, {v}) references an unknown node")
            if u == v:
                raise GraphError(f"self-loop on node {self.ids[u]!r} is not allowed")
            norm.append((u, v) if u < v else (v, u))
        norm.sort()
        self.edges = tuple(norm)
        self.n_edges = len(self.edges)

        adj: list[list[int]] = [[] for _ in range(self.m)]
        for u, v in self.edges:
            adj[u].append(v)
            adj[v].append(u)
        self.adj = [tuple(a) for a in adj]

        self.attrs = {k: np.asarray(v, dtype=float) for k, v in (attrs or {}).items()}
        for k, v in self.attrs.items():
            if v.shape != (self.m,):
                raise GraphError(f"attribute {k!r} must have one value per node")
        self.units = {k: tuple(str(x) for x in v) for k, v in (units or {}).items()}
        for k, v in self.units.items():
            if len(v) != self.m:
                raise GraphError(f"unit level {k!r} must label every node")

        self.connected = self.m > 0 and is_connected(self, range(self.m))

    def __repr__(self):
        return f"Graph(m={self.m}, edges={self.n_edges}, pop={self.total_pop})"

    def node(self, nid: str) -> int:
        try:
            return self.index[nid]
        except KeyError:
            raise GraphError(f"unknown node {nid!r}") from None


def build_graph(node_records: Sequence[Mapping], edge_records: Iterable[Sequence]) -> Graph:
    """Validate parsed JSON records and build a :class:`Graph`.

    ``node_records`` entries look like ``{"id": str, "pop": int, "attrs": {...},
    "units": {level: unit}}``; ``edge_records`` are ``[id1, id2]`` pairs.
    """
    ids = [str(r["id"]) for r in node_records]
    index = {}
    for k, nid in enumerate(ids):
        if nid in index:
            raise GraphError(f"duplicate node id {nid!r}")
        index[nid] = k
    pops = [r.get("pop", 0) for r in node_records]

    attr_names = sorted({a for r in node_records for a in (r.get("attrs") or {})})
    attrs = {a: [float((r.get("attrs") or {}).get(a, 0.0)) for r in node_records] for a in attr_names}
    level_names = []
    for r in node_records:
        for lv in (r.get("units") or {}):
            if lv not in level_names:
                level_names.append(lv)
    units = {}
    for lv in level_names:
        col = []
        for r in node_records:
            u = (r.get("units") or {}).get(lv)
            if u is None:
                raise GraphError(f"node {r['id']!r} has no unit at level {lv!r}")
            col.append(str(u))
        units[lv] = col

    edges = []
    for rec in edge_records:
        if len(rec) != 2:
            raise GraphError(f"edge record {rec!r} must have exactly two endpoints")
        a, b = str(rec[0]), str(rec[1])
        for x in (a, b):
            if x not in index:
                raise GraphError(f"edge ({a}, {b}) references unknown node {x!r}")
        if a == b:
            raise GraphError(f"self-loop on node {a!r} is not allowed")
        edges.append((index[a], index[b]))
    return Graph(ids, pops, edges, attrs=attrs, units=units)


def graph_from_json(doc: Mapping) -> Graph:
    if "nodes" not in doc or "edges" not in doc:
        raise GraphError("graph document needs 'nodes' and 'edges'")
    return build_graph(doc["nodes"], doc["edges"])


def graph_to_json(graph: Graph) -> dict:
    nodes = []
    for k, nid in enumerate(graph.ids):
        rec = {"id": nid, "pop": int(graph.pop[k])}
        if graph.attrs:
            rec["attrs"] = {a: float(v[k]) for a, v in graph.attrs.items()}
        if graph.units:
            rec["units"] = {lv: u[k] for lv, u in graph.units.items()}
        nodes.append(rec)
    edges = [[graph.ids[u], graph.ids[v]] for u, v in graph.edges]
    return {"nodes": nodes, "edges": edges}


# ---------------------------------------------------------------------------
# connectivity helpers

def components(graph: Graph, nodes: Iterable[int]) -> list[list[int]]:
    """Connected components of the subgraph induced by ``nodes``, each sorted."""
    nodes = list(nodes)
    mask = np.zeros(graph.m, dtype=bool)
    mask[nodes] = True
    seen = np.zeros(graph.m, dtype=bool)
    out = []
    adj = graph.adj
    for s in sorted(nodes):
        if seen[s]:
            continue
        seen[s] = True
        comp = [s]
        stack = [s]
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if mask[u] and not seen[u]:
                    seen[u] = True
                    comp.append(u)
                    stack.append(u)
        comp.sort()
        out.append(comp)
    return out


def is_connected(graph: Graph, nodes: Iterable[int]) -> bool:
    nodes = list(nodes)
    if not nodes:
        return False
    inside = set(nodes)
    start = nodes[0]
    seen = {start}
    queue = deque([start])
    adj = graph.adj
    while queue:
        v = queue.popleft()
        for u in adj[v]:
            if u in inside and u not in seen:
                seen.add(u)
                queue.append(u)
    return len(seen) == len(inside)


def boundary_count(graph: Graph, a: Iterable[int], b: Iterable[int]) -> int:
    """Number of edges (with multiplicity) joining node sets ``a`` and ``b``."""
    bset = set(b)
    return sum(1 for v in a for u in graph.adj[v] if u in bset)


# ---------------------------------------------------------------------------
# plans

@dataclass(frozen=True)
class Plan:
    """Assignment of every node to a district ``0..n-1``.

    District labels are 0-based internally; file formats use ``1..n``.
    """

    assignment: np.ndarray
    n: int

    def __post_init__(self):
        a = np.asarray(self.assignment, dtype=np.int64)
        object.__setattr__(self, "assignment", a)
        if a.ndim != 1:
            raise GraphError("assignment must be one-dimensional")
        if a.size and (a.min() < 0 or a.max() >= self.n):
            raise GraphError("assignment must be total with districts in 0..n-1")

    def districts(self) -> list[np.ndarray]:
        return [np.flatnonzero(self.assignment == i) for i in range(self.n)]

    def canonical(self) -> tuple[int, ...]:
        return canonical_form(self.assignment)

    def is_connected(self, graph: Graph) -> bool:
        return all(d.size > 0 and is_connected(graph, d.tolist()) for d in self.districts())

    @classmethod
    def from_mapping(cls, graph: Graph, mapping: Mapping[str, int], one_based: bool = True) -> "Plan":
        a = np.full(graph.m, -1, dtype=np.int64)
        for nid, d in mapping.items():
            a[graph.node(str(nid))] = int(d) - (1 if one_based else 0)
        if (a < 0).any():
            missing = graph.ids[int(np.flatnonzero(a < 0)[0])]
            raise GraphError(f"plan does not assign node {missing!r}")
        return cls(a, int(a.max()) + 1)

    def to_mapping(self, graph: Graph) -> dict[str, int]:
        return {nid: int(d) + 1 for nid, d in zip(graph.ids, self.assignment)}


def canonical_form(assignment: Sequence[int]) -> tuple[int, ...]:
    """Relabel districts in order of their smallest node index."""
    relabel: dict[int, int] = {}
    out = []
    for d in assignment:
        d = int(d)
        if d not in relabel:
            relabel[d] = len(relabel)
        out.append(relabel[d])
    return tuple(out)


# ---------------------------------------------------------------------------
# labelings

class Labeling:
    """Nested administrative labeling, levels ordered coarsest to finest.

    Each level stores integer unit codes per node.  Codes at level ``l`` are
    assigned to the tuple of raw labels at levels ``0..l``, so units are
    automatically nested; straddling raw labels are rejected.
    """

    def __init__(self, graph: Graph, level_names: Sequence[str]):
        if not level_names:
            raise GraphError("a labeling needs at least one level")
        self.names = tuple(level_names)
        raw = []
        for lv in self.names:
            if lv not in graph.units:
                raise GraphError(f"graph has no unit level {lv!r}")
            raw.append(graph.units[lv])

        self.codes: list[np.ndarray] = []
        self.unit_names: list[list[str]] = []
        parent_of: dict[str, str] = {}
        for li, labels in enumerate(raw):
            if li > 0:
                for v in range(graph.m):
                    prev = raw[li - 1][v]
                    got = parent_of.setdefault(labels[v], prev)
                    if got != prev:
                        raise GraphError(
                            f"unit {labels[v]!r} at level {self.names[li]!r} straddles "
                            f"units {got!r} and {prev!r} of level {self.names[li - 1]!r}"
                        )
                parent_of = {}
            keys = {}
            codes = np.empty(graph.m, dtype=np.int64)
            names = []
            for v in range(graph.m):
                key = tuple(r[v] for r in raw[: li + 1])
                if key not in keys:
                    keys[key] = len(keys)
                    names.append(labels[v])
                codes[v] = keys[key]
            self.codes.append(codes)
            self.unit_names.append(names)

    @property
    def n_levels(self) -> int:
        return len(self.codes)

    def n_units(self, level: int) -> int:
        return len(self.unit_names[level])

    def unit_name(self, level: int, code: int) -> str:
        return self.unit_names[level][code]


# ---------------------------------------------------------------------------
# spanning-tree counts

def _log_tau_nodes(graph: Graph, nodes: Sequence[int]) -> float:
    """log of the spanning-tree count of the subgraph induced by ``nodes``."""
    k = len(nodes)
    if k == 0:
        return 0.0
    if k == 1:
        return 0.0
    if not is_connected(graph, nodes):
        return NEG_INF
    order = sorted(nodes)
    pos = {v: i for i, v in enumerate(order)}
    lap = np.zeros((k, k))
    adj = graph.adj
    for v in order:
        i = pos[v]
        for u in adj[v]:
            j = pos.get(u)
            if j is not None:
                lap[i, j] -= 1.0
                lap[i, i] += 1.0
    return _reduced_logdet(lap)


def _reduced_logdet(lap: np.ndarray) -> float:
    # drop row/column 0 (smallest node id)
    red = lap[1:, 1:]
    if red.shape[0] == 0:
        return 0.0
    sign, logdet = np.linalg.slogdet(red)
    if sign <= 0:
        return NEG_INF
    return float(logdet)


def log_spanning_tree_count(graph: Graph) -> float:
    """Natural log of the number of spanning trees; ``-inf`` if disconnected."""
    if graph.m == 0:
        raise GraphError("empty graph")
    return _log_tau_nodes(graph, range(graph.m))


def log_tau_nodes(graph: Graph, nodes: Sequence[int]) -> float:
    return _log_tau_nodes(graph, list(nodes))


def log_tau_plan(graph: Graph, plan: Plan) -> float:
    """Sum of log spanning-tree counts over districts (``-inf`` if any is disconnected)."""
    total = 0.0
    for d in plan.districts():
        if d.size == 0:
            return NEG_INF
        total += _log_tau_nodes(graph, d.tolist())
        if total == NEG_INF:
            return NEG_INF
    return total


def quotient(graph: Graph, codes: Sequence[int], nodes: Sequence[int] | None = None):
    """Contract each unit to a single node.

    Returns ``(units, multiplicity)`` where ``units`` is the sorted list of unit
    codes present in ``nodes`` and ``multiplicity`` maps unit-index pairs
    ``(a, b)`` with ``a < b`` to the number of original edges joining them.
    Within-unit edges (self-loops of the quotient) are dropped.
    """
    if nodes is None:
        nodes = range(graph.m)
    nodes = list(nodes)
    inside = set(nodes)
    units = sorted({int(codes[v]) for v in nodes})
    upos = {u: i for i, u in enumerate(units)}
    mult: dict[tuple[int, int], int] = {}
    for v in nodes:
        cv = upos[int(codes[v])]
        for u in graph.adj[v]:
            if u > v and u in inside:
                cu = upos[int(codes[u])]
                if cu != cv:
                    key = (cv, cu) if cv < cu else (cu, cv)
                    mult[key] = mult.get(key, 0) + 1
    return units, mult


def quotient_graph(graph: Graph, labeling: Labeling, level: int = 0) -> Graph:
    """The quotient multigraph as a :class:`Graph` whose nodes are unit names."""
    codes = labeling.codes[level]
    units, mult = quotient(graph, codes)
    ids = [labeling.unit_name(level, u) for u in units]
    if len(set(ids)) != len(ids):
        ids = [f"{labeling.unit_name(level, u)}#{u}" for u in units]
    pops = [int(graph.pop[codes == u].sum()) for u in units]
    edges = [e for e, c in sorted(mult.items()) for _ in range(c)]
    return Graph(ids, pops, edges)


def _log_tau_quotient(n_units: int, mult: Mapping[tuple[int, int], int]) -> float:
    if n_units <= 1:
        return 0.0
    lap = np.zeros((n_units, n_units))
    for (a, b), c in mult.items():
        lap[a, b] -= c
        lap[b, a] -= c
        lap[a, a] += c
        lap[b, b] += c
    # connectivity of the quotient
    adj = [[] for _ in range(n_units)]
    for a, b in mult:
        adj[a].append(b)
        adj[b].append(a)
    seen = {0}
    stack = [0]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen:
                seen.add(y)
                stack.append(y)
    if len(seen) != n_units:
        return NEG_INF
    return _reduced_logdet(lap)


def log_tau_eta_nodes(graph: Graph, nodes: Sequence[int], labeling: Labeling | None, depth: int = 0) -> float:
    """Log count of spanning trees that restrict to spanning trees in every unit.

    Recurses over labeling levels: the quotient count at level ``depth`` plus
    the counts of every unit piece at the finer levels.
    """
    nodes = list(nodes)
    if labeling is None or depth >= labeling.n_levels:
        return _log_tau_nodes(graph, nodes)
    if not nodes:
        return 0.0
    codes = labeling.codes[depth]
    groups: dict[int, list[int]] = {}
    for v in nodes:
        groups.setdefault(int(codes[v]), []).append(v)
    if len(groups) == 1:
        return log_tau_eta_nodes(graph, nodes, labeling, depth + 1)
    units, mult = quotient(graph, codes, nodes)
    total = _log_tau_quotient(len(units), mult)
    if total == NEG_INF:
        return NEG_INF
    for u in units:
        part = log_tau_eta_nodes(graph, groups[u], labeling, depth + 1)
        if part == NEG_INF:
            return NEG_INF
        total += part
    return total


def log_tau_eta(graph: Graph, labeling: Labeling) -> float:
    """Hierarchical spanning-tree count of the whole graph (log scale)."""
    return log_tau_eta_nodes(graph, range(graph.m), labeling)


def log_tau_eta_plan(graph: Graph, plan: Plan, labeling: Labeling | None) -> float:
    total = 0.0
    for d in plan.districts():
        if d.size == 0:
            return NEG_INF
        total += log_tau_eta_nodes(graph, d.tolist(), labeling)
        if total == NEG_INF:
            return NEG_INF
    return total

