"""Additional-constraint functions ``J`` for the target distribution.

A :class:`ConstraintSpec` is a list of terms whose penalties add up.  Terms
marked ``decomposable`` are sums of per-district penalties; the SMC sampler
charges those at every stage instead of only at the end.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .graph import Graph, Labeling, Plan
from . import metrics

INF = float("inf")


class ConstraintTerm:
    kind = "term"
    decomposable = False

    def penalty(self, graph: Graph, assignment: np.ndarray) -> float:
        raise NotImplementedError

    def district_penalty(self, graph: Graph, nodes: Sequence[int]) -> float:
        raise TypeError(f"{self.kind} is not district-decomposable")

    def to_config(self) -> dict:
        raise TypeError(f"{self.kind} cannot be serialised")


@dataclass
class StatusQuo(ConstraintTerm):
    """Penalty ``beta * VI(plan, reference) / log n`` toward an existing plan."""

    reference: np.ndarray
    beta: float = 1.0
    kind = "status_quo"

    def penalty(self, graph, assignment):
        n = int(np.max(assignment)) + 1
        if n < 2:
            return 0.0
        vi = metrics.variation_of_information(assignment, self.reference, graph)
        return self.beta * vi / math.log(n)

    def to_config(self):
        return {"kind": self.kind, "beta": self.beta, "reference": [int(x) for x in self.reference]}


@dataclass
class SplitPenalty(ConstraintTerm):
    """``beta * spl`` when ``spl <= s_max`` and infinite otherwise."""

    level: str
    beta: float = 0.0
    s_max: int | None = None
    kind = "splits"
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def _labeling(self, graph):
        lab = self._cache.get(id(graph))
        if lab is None:
            lab = Labeling(graph, [self.level])
            self._cache.clear()
            self._cache[id(graph)] = lab
        return lab

    def penalty(self, graph, assignment):
        s = metrics.spl(assignment, graph, self._labeling(graph), 0)
        if self.s_max is not None and s > self.s_max:
            return INF
        return self.beta * s

    def to_config(self):
        return {"kind": self.kind, "level": self.level, "beta": self.beta, "s_max": self.s_max}

    def __getstate__(self):
        state = dict(self.__dict__)
        state["_cache"] = {}
        return state


@dataclass
class MaxRem(ConstraintTerm):
    """Hard cap on the fraction of cut edges."""

    cap: float
    kind = "max_rem"

    def penalty(self, graph, assignment):
        return 0.0 if metrics.rem(assignment, graph) <= self.cap else INF

    def to_config(self):
        return {"kind": self.kind, "cap": self.cap}


@dataclass
class HardPredicate(ConstraintTerm):
    """Zero when ``predicate(graph, assignment)`` holds, infinite otherwise."""

    predicate: Callable[[Graph, np.ndarray], bool]
    kind = "hard"

    def penalty(self, graph, assignment):
        return 0.0 if self.predicate(graph, assignment) else INF


@dataclass
class DistrictPenalty(ConstraintTerm):
    """Sum over districts of ``beta * func(graph, nodes)``."""

    func: Callable[[Graph, Sequence[int]], float]
    beta: float = 1.0
    kind = "district"
    decomposable = True

    def district_penalty(self, graph, nodes):
        return self.beta * float(self.func(graph, nodes))

    def penalty(self, graph, assignment):
        n = int(np.max(assignment)) + 1
        return sum(self.district_penalty(graph, np.flatnonzero(assignment == i)) for i in range(n))


@dataclass
class IncumbentPairing(ConstraintTerm):
    """``beta`` for every incumbent beyond the first in a district.

    Incumbents are counted from the node attribute ``attr``.
    """

    attr: str
    beta: float = 1.0
    kind = "incumbents"
    decomposable = True

    def district_penalty(self, graph, nodes):
        count = float(np.sum(graph.attrs[self.attr][np.asarray(nodes, dtype=np.int64)]))
        return self.beta * max(0.0, count - 1.0)

    def penalty(self, graph, assignment):
        n = int(np.max(assignment)) + 1
        return sum(self.district_penalty(graph, np.flatnonzero(assignment == i)) for i in range(n))

    def to_config(self):
        return {"kind": self.kind, "attr": self.attr, "beta": self.beta}


@dataclass
class ConstraintSpec:
    """A sum of constraint terms; evaluates to ``J(plan)`` (possibly infinite)."""

    terms: list[ConstraintTerm] = field(default_factory=list)

    def __post_init__(self):
        for t in self.terms:
            beta = getattr(t, "beta", 0.0)
            if beta < 0:
                raise ValueError(f"constraint strength must be nonnegative, got {beta} for {t.kind}")

    def __bool__(self):
        return bool(self.terms)

    @property
    def has_decomposable(self) -> bool:
        return any(t.decomposable for t in self.terms)

    def __call__(self, graph: Graph, plan) -> float:
        a = plan.assignment if isinstance(plan, Plan) else np.asarray(plan)
        total = 0.0
        for t in self.terms:
            total += t.penalty(graph, a)
            if total == INF:
                return INF
        return total

    def global_penalty(self, graph: Graph, plan) -> float:
        """Penalty from the non-decomposable terms only."""
        a = plan.assignment if isinstance(plan, Plan) else np.asarray(plan)
        total = 0.0
        for t in self.terms:
            if not t.decomposable:
                total += t.penalty(graph, a)
                if total == INF:
                    return INF
        return total

    def district_penalty(self, graph: Graph, nodes: Sequence[int]) -> float:
        return sum(t.district_penalty(graph, nodes) for t in self.terms if t.decomposable)

    def to_config(self) -> list[dict]:
        return [t.to_config() for t in self.terms]

    @classmethod
    def from_config(cls, items: Sequence[Mapping] | None, graph: Graph | None = None) -> "ConstraintSpec":
        """Build terms from config dicts (``{"kind": ..., ...}``).

        ``status_quo`` takes either ``reference`` (0-based district per node in
        graph order), ``assignment`` (node id -> 1-based district) or
        ``level`` (a unit level of the graph whose labels are the districts).
        """
        terms: list[ConstraintTerm] = []
        for raw in items or []:
            item = dict(raw)
            kind = item.pop("kind", None)
            if kind == "status_quo":
                beta = float(item.pop("beta", 1.0))
                if "reference" in item:
                    ref = np.asarray(item.pop("reference"), dtype=np.int64)
                elif "assignment" in item:
                    if graph is None:
                        raise ValueError("status_quo by assignment needs the graph")
                    ref = Plan.from_mapping(graph, item.pop("assignment")).assignment
                elif "level" in item:
                    if graph is None:
                        raise ValueError("status_quo by level needs the graph")
                    labels = graph.units[item.pop("level")]
                    names = {u: i for i, u in enumerate(dict.fromkeys(labels))}
                    ref = np.asarray([names[u] for u in labels], dtype=np.int64)
                else:
                    raise ValueError("status_quo needs 'reference', 'assignment' or 'level'")
                term: ConstraintTerm = StatusQuo(ref, beta)
            elif kind == "splits":
                s_max = item.pop("s_max", None)
                term = SplitPenalty(str(item.pop("level")), float(item.pop("beta", 0.0)),
                                    None if s_max is None else int(s_max))
            elif kind == "max_rem":
                term = MaxRem(float(item.pop("cap")))
            elif kind == "incumbents":
                term = IncumbentPairing(str(item.pop("attr")), float(item.pop("beta", 1.0)))
            else:
                raise ValueError(f"unknown constraint kind {kind!r}")
            if item:
                raise ValueError(f"unknown keys for constraint {kind!r}: {sorted(item)}")
            terms.append(term)
        return cls(terms)
