"""Split one district off a remainder by cutting a spanning tree.

Population comparisons are exact: with ``D = p/q`` every bound is scaled by
``n*q`` so acceptance is decided in integer arithmetic.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from fractions import Fraction
from typing import NamedTuple, Sequence

from .graph import Graph, Labeling
from .rng import as_stream
from .ust import SpanningTree, sample_hierarchical_ust


class KClampWarning(UserWarning):
    """k exceeded the number of tree edges and was reduced."""


def as_fraction(x) -> Fraction:
    """Exact fraction for a tolerance given as float, str, int or Fraction."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, float):
        return Fraction(repr(x))
    return Fraction(x)


@dataclass(frozen=True)
class SplitParams:
    n: int
    D: Fraction
    k: int
    stage: int

    def __post_init__(self):
        object.__setattr__(self, "D", as_fraction(self.D))
        if self.n < 2:
            raise ValueError("need at least two districts to split")
        if not (0 <= self.D <= self.n - 1):
            raise ValueError(f"population tolerance must lie in [0, n-1], got {self.D}")
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if not (1 <= self.stage <= self.n - 1):
            raise ValueError(f"stage must lie in 1..{self.n - 1}")


class EdgeScore(NamedTuple):
    child: int
    parent: int
    dev: float
    key: int  # |n * pop(side) - pop(V)| for the better side; dev == key / pop(V)

    @property
    def edge(self) -> tuple[int, int]:
        return (self.child, self.parent) if self.child < self.parent else (self.parent, self.child)


@dataclass
class SplitOutcome:
    district: list[int]
    remainder: list[int]
    cut_edge: tuple[int, int]
    dev: float
    accepted: bool
    k_used: int


def edge_deviations(tree: SpanningTree, total_pop: int, n: int) -> list[EdgeScore]:
    """Score every tree edge by the smaller population deviation of its two sides.

    Sorted ascending by deviation, ties broken by the edge's node pair.
    """
    rem_pop = tree.subtree_pop[tree.root]
    sub = tree.subtree_pop
    out = []
    for v in tree.order:
        p = tree.parent[v]
        if p < 0:
            continue
        s = sub[v]
        key = min(abs(n * s - total_pop), abs(n * (rem_pop - s) - total_pop))
        out.append(EdgeScore(v, p, key / total_pop if total_pop else 0.0, key))
    out.sort(key=lambda e: (e.key, e.edge))
    return out


def scaled_bounds(stage: int, remainder_pop: int, total_pop: int, n: int, D: Fraction) -> tuple[int, int]:
    """Bounds on ``n*q*pop(district)`` for ``D = p/q``."""
    p, q = D.numerator, D.denominator
    lo = max(total_pop * (q - p), n * q * remainder_pop - (n - stage) * total_pop * (q + p))
    hi = min(total_pop * (q + p), n * q * remainder_pop - (n - stage) * total_pop * (q - p))
    return lo, hi


def population_bounds(stage: int, remainder_pop: int, total_pop: int, n: int, D) -> tuple[Fraction, Fraction]:
    """Allowed population range ``[P-, P+]`` for the district split off at ``stage``.

    The lower and upper bounds keep the new district within tolerance and
    leave a remainder that can still be cut into ``n - stage`` valid districts.
    ``P- > P+`` means no split of this remainder can succeed.
    """
    D = as_fraction(D)
    lo, hi = scaled_bounds(stage, remainder_pop, total_pop, n, D)
    scale = n * D.denominator
    return Fraction(lo, scale), Fraction(hi, scale)


def split_district(graph: Graph, remainder: Sequence[int], params: SplitParams,
                   labeling: Labeling | None = None, rng=None,
                   tree: SpanningTree | None = None) -> SplitOutcome:
    """Draw a tree on ``remainder``, cut one of its ``k`` best edges, test the bounds."""
    rng = as_stream(rng)
    nodes = sorted(int(v) for v in remainder)
    if tree is None:
        tree = sample_hierarchical_ust(graph, labeling, rng, nodes, check=False)
    n, total = params.n, graph.total_pop
    rem_pop = tree.subtree_pop[tree.root]
    sub = tree.subtree_pop
    parent = tree.parent
    # same ordering as edge_deviations: (key, low endpoint, high endpoint)
    scored = []
    for v in tree.order:
        p = parent[v]
        if p >= 0:
            s = sub[v]
            k1 = abs(n * s - total)
            k2 = abs(n * (rem_pop - s) - total)
            scored.append((k1 if k1 < k2 else k2, v if v < p else p, p if v < p else v, v))
    if not scored:
        raise ValueError("remainder has a single node and cannot be split")
    scored.sort()
    k = params.k
    if k > len(scored):
        warnings.warn(f"k={k} exceeds the {len(scored)} tree edges at stage {params.stage}; clamped",
                      KClampWarning, stacklevel=2)
        k = len(scored)
    key, lo_end, hi_end, child = scored[int(rng.random() * k)]

    s1 = sub[child]
    d1 = abs(n * s1 - total)
    d2 = abs(n * (rem_pop - s1) - total)
    side1 = tree.subtree(child)
    in1 = set(side1)
    side2 = [v for v in nodes if v not in in1]
    if d1 < d2 or (d1 == d2 and min(side1) < side2[0]):
        district, rest, dpop = sorted(side1), side2, s1
    else:
        district, rest, dpop = side2, sorted(side1), rem_pop - s1

    lo, hi = scaled_bounds(params.stage, rem_pop, total, n, params.D)
    x = n * params.D.denominator * dpop
    dev = key / total if total else 0.0
    return SplitOutcome(district, rest, (lo_end, hi_end), dev, lo <= x <= hi, k)
