"""Exhaustive enumeration of balanced connected partitions of small graphs.

Districts are grown one at a time, each from the smallest unassigned node, so
every partition is produced exactly once and already in canonical labeling.
Connected sets containing a seed node are enumerated by include/exclude
branching on the frontier.  A branch is pruned when its population exceeds the
upper bound or when the leftover components cannot host the remaining
districts.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np
from scipy.special import logsumexp

from .constraints import ConstraintSpec
from .graph import NEG_INF, Graph, Labeling, canonical_form, is_connected, log_tau_eta_nodes, log_tau_nodes
from .metrics import dev, rem, spl
from .splitter import as_fraction


class EnumerationCapError(RuntimeError):
    """The search grew past its node budget."""


def _bits(mask: int):
    while mask:
        low = mask & -mask
        yield low.bit_length() - 1
        mask ^= low


def enumerate_assignments(graph: Graph, n: int, D, cap: int = 10**8) -> np.ndarray:
    """All canonical assignments with connected districts and ``dev <= D``, sorted."""
    D = as_fraction(D)
    if n < 1 or n > graph.m:
        raise ValueError("n must lie in 1..number of nodes")
    if D < 0:
        raise ValueError("population tolerance must be nonnegative")
    m = graph.m
    total = graph.total_pop
    pop = [int(x) for x in graph.pop]
    p, q = D.numerator, D.denominator
    # district pop x is valid iff lo_s <= n*q*x <= hi_s
    lo_s, hi_s = total * (q - p), total * (q + p)
    nq = n * q
    adj = [0] * m
    for u, v in graph.edges:
        adj[u] |= 1 << v
        adj[v] |= 1 << u
    budget = [cap]

    def tick():
        budget[0] -= 1
        if budget[0] < 0:
            raise EnumerationCapError(
                f"enumeration exceeded {cap} search steps; use a smaller graph or raise the cap"
            )

    def mask_pop(mask):
        return sum(pop[v] for v in _bits(mask))

    def components(mask):
        out = []
        while mask:
            seed = mask & -mask
            comp = seed
            frontier = seed
            while frontier:
                nb = 0
                for v in _bits(frontier):
                    nb |= adj[v]
                frontier = nb & mask & ~comp
                comp |= frontier
            out.append(comp)
            mask &= ~comp
        return out

    def can_host(mask, r):
        lo_sum = hi_sum = 0
        for comp in components(mask):
            cp = nq * mask_pop(comp)
            size = bin(comp).count("1")
            # hi_s == 0 only when the total population is zero
            need = max(1, -(-cp // hi_s)) if hi_s else 1
            room = min(size, cp // lo_s) if lo_s else size
            if need > room:
                return False
            lo_sum += need
            hi_sum += room
        return lo_sum <= r <= hi_sum

    def grow(free, v0):
        # connected sets inside free containing v0, pop-bounded
        out = []

        def rec(S, X, excl, sp):
            tick()
            if X == 0:
                if lo_s <= nq * sp:
                    out.append(S)
                return
            ub = X & -X
            u = ub.bit_length() - 1
            X2 = X ^ ub
            if nq * (sp + pop[u]) <= hi_s:
                S2 = S | ub
                rec(S2, X2 | (adj[u] & free & ~S2 & ~excl & ~X2), excl, sp + pop[u])
            rec(S, X2, excl | ub, sp)

        b0 = 1 << v0
        if nq * pop[v0] <= hi_s:
            rec(b0, adj[v0] & free & ~b0, 0, pop[v0])
        return out

    results: list[list[int]] = []

    def place(free, d, parts):
        tick()
        if d == n - 1:
            sp = nq * mask_pop(free)
            if lo_s <= sp <= hi_s and len(components(free)) == 1:
                results.append(parts + [free])
            return
        v0 = (free & -free).bit_length() - 1
        for S in grow(free, v0):
            rest = free & ~S
            if rest and can_host(rest, n - d - 1):
                place(rest, d + 1, parts + [S])

    place((1 << m) - 1, 0, [])
    out = np.empty((len(results), m), dtype=np.int64)
    for r, parts in enumerate(results):
        for d, mask in enumerate(parts):
            for v in _bits(mask):
                out[r, v] = d
    if len(out):
        order = np.lexsort(out.T[::-1])
        out = out[order]
    return out


def naive_enumerate(graph: Graph, n: int, D) -> set[tuple[int, ...]]:
    """Brute force over all ``n**m`` labelings; for testing on tiny graphs."""
    D = as_fraction(D)
    total = graph.total_pop
    found = set()
    for labels in itertools.product(range(n), repeat=graph.m):
        a = np.asarray(labels)
        if len(set(labels)) != n:
            continue
        pops = np.bincount(a, weights=graph.pop, minlength=n)
        if any(Fraction(abs(n * int(x) - total), total) > D for x in pops):
            continue
        if all(is_connected(graph, np.flatnonzero(a == i).tolist()) for i in range(n)):
            found.add(canonical_form(a))
    return found


@dataclass
class ReferenceSet:
    """Enumerated plans with cached statistics.

    ``plans[r]`` is a canonical 0-based assignment.  ``log_tau`` holds
    ``log tau(plan)``; with a labeling ``log_tau_eta`` and ``spl`` (one column
    per level) are filled too.
    """

    graph: Graph
    n: int
    D: Fraction
    plans: np.ndarray
    dev: np.ndarray
    rem: np.ndarray
    log_tau: np.ndarray
    log_tau_eta: np.ndarray | None = None
    spl: np.ndarray | None = None
    level_names: tuple[str, ...] | None = None
    _index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self._index = {tuple(int(x) for x in p): r for r, p in enumerate(self.plans)}

    def __len__(self):
        return len(self.plans)

    def index_of(self, plan) -> int:
        """Row of a plan (any labeling), or -1 if it is not in the set."""
        a = plan.assignment if hasattr(plan, "assignment") else plan
        return self._index.get(canonical_form(a), -1)

    def labeling(self) -> Labeling | None:
        return Labeling(self.graph, self.level_names) if self.level_names else None


def enumerate_partitions(graph: Graph, n: int, D, cap: int = 10**8,
                         admin_levels=None) -> ReferenceSet:
    """Enumerate every balanced connected ``n``-partition and cache its statistics."""
    D = as_fraction(D)
    plans = enumerate_assignments(graph, n, D, cap)
    lab = Labeling(graph, admin_levels) if admin_levels else None
    P = len(plans)
    devs = np.array([dev(p, graph, n) for p in plans])
    rems = np.array([rem(p, graph) for p in plans])
    lt = np.array([sum(log_tau_nodes(graph, np.flatnonzero(p == i).tolist()) for i in range(n))
                   for p in plans]) if P else np.zeros(0)
    lte = spls = None
    if lab is not None:
        lte = np.array([sum(log_tau_eta_nodes(graph, np.flatnonzero(p == i).tolist(), lab)
                            for i in range(n)) for p in plans]) if P else np.zeros(0)
        spls = np.array([[spl(p, graph, lab, lv) for lv in range(lab.n_levels)] for p in plans],
                        dtype=np.int64).reshape(P, lab.n_levels)
    return ReferenceSet(graph, n, D, plans, devs, rems, lt, lte, spls,
                        tuple(admin_levels) if admin_levels else None)


def reweight_reference(refset: ReferenceSet, rho: float, constraints: ConstraintSpec | None = None,
                       use_labeling: bool = True) -> np.ndarray:
    """Target probabilities ``exp(-J) tau^rho`` over the reference set.

    With a labeling (and ``use_labeling``) the unit-respecting tree count is
    used and plans splitting more than ``n - 1`` units at any level get zero
    mass.
    """
    if len(refset) == 0:
        raise ValueError("reference set is empty")
    lab_on = use_labeling and refset.log_tau_eta is not None
    lt = refset.log_tau_eta if lab_on else refset.log_tau
    logp = rho * lt if rho != 0 else np.zeros(len(refset))
    logp = np.where(np.isfinite(lt), logp, NEG_INF)
    if lab_on:
        logp = np.where((refset.spl <= refset.n - 1).all(axis=1), logp, NEG_INF)
    if constraints:
        J = np.array([constraints(refset.graph, p) for p in refset.plans])
        logp = np.where(np.isfinite(J), logp - np.where(np.isfinite(J), J, 0.0), NEG_INF)
    if not np.isfinite(logp).any():
        raise ValueError("target has empty support on the reference set")
    return np.exp(logp - logsumexp(logp))
