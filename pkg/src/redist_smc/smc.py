"""Sequential Monte Carlo sampler for redistricting plans.

Districts are split off one at a time.  At every stage each of the ``S``
particle slots repeatedly (i) picks a parent partial plan by tempered
resampling and (ii) runs :func:`~redist_smc.splitter.split_district`, until a
split falls within the population bounds.  Each accepted split gets the
incremental weight ``tau(G_i)^(rho-1) * k_i / |C(G_i, rest)|``.

Resampling at stage ``i`` uses ``w_{i-1}^alpha``.  Nothing resamples on the
last stage weight, so its ``alpha`` share is either multiplied into the final
weight (``terminal="weight"``, the default) or applied by one tempered
resample (``terminal="resample"``), after which the final weights are exactly
``exp(-J) * (prod w_i)^(1-alpha) * tau(G_n)^(rho-1)``.  Either way every
incremental weight enters with total exponent 1 and the weights are proper for
``exp(-J) * tau^rho`` on balanced connected plans.
"""
from __future__ import annotations

import math
import re
import time
import warnings
from bisect import bisect_right
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import accumulate
from typing import Sequence

import numpy as np
from scipy.special import logsumexp

from .constraints import ConstraintSpec
from .graph import (NEG_INF, Graph, GraphError, Labeling, Plan, boundary_count,
                    is_connected, log_tau_eta_nodes)
from .rng import RngStream
from .splitter import (KClampWarning, SplitParams, as_fraction, edge_deviations,
                       scaled_bounds, split_district)
from .ust import sample_hierarchical_ust

# stream namespaces
_SLOT, _KSEL, _TERMINAL, _FINAL = 1, 2, 3, 4


class SMCError(RuntimeError):
    """Base class for sampler failures."""


class InfeasibleError(SMCError):
    """No remainder can be split within the population bounds."""


class StageStarvedError(SMCError):
    """A stage exhausted its retry budget."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class SmcConfig:
    """Parameters of one SMC run.

    ``k`` is ``"auto"`` (chosen per stage by :func:`select_k`), an int used at
    every stage, or a list with one entry per stage.  ``truncation`` is
    ``None``, a cap ``w_max`` on mean-one normalised weights, or a rule string
    ``"S^a/c"`` meaning ``w_max = S**a / c``.
    """

    n_particles: int
    n_districts: int
    pop_tol: float | str | Fraction = 0.01
    rho: float = 1.0
    alpha: float = 0.5
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)
    k: str | int | Sequence[int] = "auto"
    k_threshold: float = 0.95
    k_trees: int | None = None
    truncation: float | str | None = None
    admin_levels: Sequence[str] | None = None
    seed: int | None = None
    n_jobs: int = 1
    correct_ordering: bool = False
    final_resample: bool = False
    max_attempts: int | None = None
    terminal: str = "weight"

    def __post_init__(self):
        if isinstance(self.constraints, (list, tuple)):
            self.constraints = ConstraintSpec(list(self.constraints))
        if self.constraints is None:
            self.constraints = ConstraintSpec()
        self.validate()

    def validate(self):
        if self.n_particles < 1:
            raise ValueError("n_particles must be at least 1")
        if self.n_districts < 2:
            raise ValueError("n_districts must be at least 2")
        D = as_fraction(self.pop_tol)
        if not (0 <= D <= self.n_districts - 1):
            raise ValueError(f"pop_tol must lie in [0, n-1], got {self.pop_tol}")
        if self.rho < 0:
            raise ValueError("rho must be nonnegative")
        if not (0 <= self.alpha <= 1):
            raise ValueError("alpha must lie in [0, 1]")
        if not (0 < self.k_threshold < 1):
            raise ValueError("k_threshold must lie in (0, 1)")
        if self.k_trees is not None and self.k_trees < 2:
            raise ValueError("k_trees must be at least 2")
        if isinstance(self.k, str):
            if self.k != "auto":
                raise ValueError(f"k must be 'auto', an int or a list, got {self.k!r}")
        elif isinstance(self.k, (int, np.integer)):
            if self.k < 1:
                raise ValueError("k must be at least 1")
        else:
            ks = list(self.k)
            if len(ks) != self.n_districts - 1 or min(ks) < 1:
                raise ValueError("a k schedule needs n-1 positive entries")
        if self.terminal not in ("weight", "resample"):
            raise ValueError("terminal must be 'weight' or 'resample'")
        truncation_cap(self.truncation, self.n_particles)

    @property
    def D(self) -> Fraction:
        return as_fraction(self.pop_tol)

    def k_for_stage(self, stage: int):
        if isinstance(self.k, str):
            return None
        if isinstance(self.k, (int, np.integer)):
            return int(self.k)
        return int(list(self.k)[stage - 1])

    def n_trees(self) -> int:
        if self.k_trees is not None:
            return self.k_trees
        return max(20, math.ceil(math.sqrt(self.n_particles)))

    def to_dict(self) -> dict:
        k = self.k if isinstance(self.k, (str, int)) else [int(x) for x in self.k]
        return {
            "n_particles": self.n_particles, "n_districts": self.n_districts,
            "pop_tol": str(self.pop_tol), "rho": self.rho, "alpha": self.alpha,
            "constraints": self.constraints.to_config(), "k": k,
            "k_threshold": self.k_threshold, "k_trees": self.k_trees,
            "truncation": self.truncation,
            "admin_levels": list(self.admin_levels) if self.admin_levels else None,
            "seed": self.seed, "correct_ordering": self.correct_ordering,
            "final_resample": self.final_resample, "max_attempts": self.max_attempts,
            "terminal": self.terminal,
        }


@dataclass
class WeightedEnsemble:
    """SMC output: ``S`` plans with stage and final log weights.

    ``assignments[j, v]`` is the 0-based district of node ``v`` in plan ``j``;
    district ``i`` was split off at stage ``i + 1`` and district ``n - 1`` is
    the leftover.  ``log_weights`` are the (possibly truncated) final weights,
    ``raw_log_weights`` the untruncated ones.
    """

    assignments: np.ndarray
    n: int
    log_stage_weights: np.ndarray
    raw_log_weights: np.ndarray
    log_weights: np.ndarray
    diagnostics: dict = field(default_factory=dict)
    resample_index: np.ndarray | None = None

    def __len__(self):
        return len(self.assignments)

    @property
    def plans(self) -> list[Plan]:
        return [Plan(a, self.n) for a in self.assignments]

    def normalized_weights(self) -> np.ndarray:
        lw = self.log_weights
        if not np.isfinite(lw).any():
            raise SMCError("every particle has zero weight")
        return np.exp(lw - logsumexp(lw))

    def resample(self, size: int | None = None, rng=None) -> np.ndarray:
        """Multinomial resample of plan indices by the final weights."""
        size = len(self) if size is None else size
        gen = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        return gen.choice(len(self), size=size, replace=True, p=self.normalized_weights())


# ---------------------------------------------------------------------------
# weights

def compatible_boundary_count(graph: Graph, a: Sequence[int], b: Sequence[int],
                              labeling: Labeling | None = None) -> int:
    """Edges joining ``a`` and ``b`` that can reconnect trees of the two parts.

    Without a labeling this is the plain boundary count.  With one, a joining
    edge must keep every unit's restriction a tree: if some unit has nodes on
    both sides, the edge has to lie inside that unit (at every level), and
    more than one such unit at a level leaves no valid edge.
    """
    if labeling is None:
        return boundary_count(graph, a, b)
    finest = None
    for lv in range(labeling.n_levels):
        codes = labeling.codes[lv]
        ua = {int(codes[v]) for v in a}
        ub = {int(codes[v]) for v in b}
        split = ua & ub
        if len(split) > 1:
            return 0
        if split:
            finest = (codes, next(iter(split)))
    bset = set(b)
    if finest is None:
        return sum(1 for v in a for u in graph.adj[v] if u in bset)
    codes, unit = finest
    return sum(1 for v in a if codes[v] == unit for u in graph.adj[v] if u in bset and codes[u] == unit)


def incremental_log_weight(graph: Graph, district: Sequence[int], remainder: Sequence[int],
                           k: int, rho: float, labeling: Labeling | None = None,
                           constraints: ConstraintSpec | None = None) -> float:
    """``(rho-1) log tau(G_i) + log k - log |C(G_i, rest)|`` minus district penalties."""
    c = compatible_boundary_count(graph, district, remainder, labeling)
    if c < 1:
        raise AssertionError("split parts share no boundary edge; tree cut bookkeeping is broken")
    lw = math.log(k) - math.log(c)
    if rho != 1:
        lw += (rho - 1) * log_tau_eta_nodes(graph, district, labeling)
    if constraints is not None and constraints.has_decomposable:
        lw -= constraints.district_penalty(graph, district)
    return lw


def final_log_weight(graph: Graph, plan, stage_log_weights: Sequence[float], alpha: float,
                     rho: float, constraints: ConstraintSpec | None = None,
                     labeling: Labeling | None = None) -> float:
    """``-J + (1-alpha) sum_i log w_i + (rho-1) log tau(G_n)``.

    ``G_n`` is the leftover district (label ``n - 1``).  Decomposable penalties
    of the split-off districts were already charged in the stage weights, so
    only the leftover district's share of them is charged here.
    """
    a = plan.assignment if isinstance(plan, Plan) else np.asarray(plan)
    n = int(a.max()) + 1
    lw = (1 - alpha) * float(np.sum(stage_log_weights))
    last = np.flatnonzero(a == n - 1)
    if rho != 1:
        lt = log_tau_eta_nodes(graph, last.tolist(), labeling)
        if lt == NEG_INF:
            return NEG_INF
        lw += (rho - 1) * lt
    if constraints:
        if constraints.has_decomposable:
            pen = constraints.global_penalty(graph, a) + constraints.district_penalty(graph, last)
        else:
            pen = constraints(graph, a)
        if pen == math.inf:
            return NEG_INF
        lw -= pen
    return lw


def resampling_probabilities(log_weights, alpha: float) -> np.ndarray:
    """Probabilities proportional to ``exp(alpha * log_weights)``; uniform for alpha=0."""
    lw = np.asarray(log_weights, dtype=float)
    if lw.size == 0:
        raise SMCError("no particles to resample")
    if alpha == 0:
        return np.full(lw.size, 1.0 / lw.size)
    x = alpha * lw
    if not np.isfinite(x).any():
        raise SMCError("every particle has zero resampling weight")
    return np.exp(x - logsumexp(x))


def resample_stage(log_weights, alpha: float, rng, size: int | None = None) -> np.ndarray:
    """Multinomial draw of particle indices with tempered weights."""
    p = resampling_probabilities(log_weights, alpha)
    size = len(p) if size is None else size
    gen = rng.generator() if isinstance(rng, RngStream) else np.random.default_rng(rng)
    return gen.choice(len(p), size=size, replace=True, p=p)


_RULE = re.compile(r"^\s*S\s*\^\s*([0-9.eE+-]+)\s*/\s*([0-9.eE+-]+)\s*$")


def truncation_cap(rule, n_particles: int) -> float | None:
    """``w_max`` for a truncation rule (``None``, number, or ``"S^a/c"``)."""
    if rule is None or (isinstance(rule, str) and rule.strip().lower() in ("none", "")):
        return None
    if isinstance(rule, (int, float)):
        if rule <= 0:
            raise ValueError("truncation cap must be positive")
        return float(rule)
    if isinstance(rule, str):
        m = _RULE.match(rule)
        if m:
            return n_particles ** float(m.group(1)) / float(m.group(2))
        try:
            return truncation_cap(float(rule), n_particles)
        except ValueError:
            pass
    raise ValueError(f"cannot parse truncation rule {rule!r}")


def truncate_weights(log_weights, rule="S^0.4/100", n_particles: int | None = None) -> np.ndarray:
    """Normalise weights to mean one and cap them at ``w_max``.

    Returns log weights on the normalised scale.  ``rule=None`` only normalises.
    """
    lw = np.asarray(log_weights, dtype=float)
    fin = np.isfinite(lw)
    if not fin.any():
        raise SMCError("no finite weights to truncate")
    S = lw.size if n_particles is None else n_particles
    norm = lw - (logsumexp(lw[fin]) - math.log(lw.size))
    cap = truncation_cap(rule, S)
    if cap is None:
        return norm
    return np.minimum(norm, math.log(cap))


# ---------------------------------------------------------------------------
# choosing k

@dataclass
class KSelection:
    k: int
    k_hat: int
    ok_counts: list[int]
    proportions: list[float]


def select_k(graph: Graph, remainders: Sequence[Sequence[int]], pop_tol, n: int,
             threshold: float = 0.95, n_trees: int = 20, labeling: Labeling | None = None,
             rng=None) -> KSelection:
    """Pick the number of candidate cut edges from a batch of sampled trees.

    ``n_trees`` trees are drawn (cycling over ``remainders``).  For each
    candidate ``k`` we estimate the probability that an edge drawn uniformly
    from one tree's ``k`` best edges also scores no worse than the ``k``-th
    best edge of another tree, and return the smallest ``k`` whose estimate
    exceeds ``threshold``.  ``k_hat`` is the largest number of within-tolerance
    edges seen on any tree.
    """
    if n_trees < 2:
        raise ValueError("select_k needs at least two trees")
    if isinstance(remainders[0], (int, np.integer)):
        remainders = [remainders]
    rng = rng if isinstance(rng, RngStream) else RngStream(rng)
    D = as_fraction(pop_tol)
    total = graph.total_pop
    keys = []
    oks = []
    for t in range(n_trees):
        nodes = remainders[t % len(remainders)]
        tree = sample_hierarchical_ust(graph, labeling, rng, nodes, check=False)
        sc = [e.key for e in edge_deviations(tree, total, n)]
        keys.append(sc)
        # within tolerance: key/total <= D  <=>  key*q <= p*total
        oks.append(sum(1 for x in sc if x * D.denominator <= D.numerator * total))
    width = max(len(s) for s in keys)
    if width == 0:
        raise ValueError("remainders must have at least two nodes")
    A = np.full((n_trees, width), np.inf)
    for t, s in enumerate(keys):
        A[t, : len(s)] = s
    props = []
    k_sel = width
    for k in range(1, width + 1):
        th = A[:, k - 1]
        vals = A[:, :k]
        hit = (vals[:, :, None] <= th[None, None, :]).sum()
        # drop each tree compared with itself
        self_hit = (vals <= th[:, None]).sum()
        prop = (hit - self_hit) / (n_trees * k * (n_trees - 1))
        props.append(float(prop))
        if prop > threshold:
            k_sel = k
            break
    return KSelection(k_sel, max(oks), oks, props)


# ---------------------------------------------------------------------------
# ordering correction

def count_orderings(graph: Graph, assignment, n: int, pop_tol, labeling: Labeling | None = None) -> int:
    """Number of district orders in which the splitter can produce this plan.

    An order is feasible when every stage's district lies within the stage
    bounds, is the side the splitter keeps (closer to ideal population, ties to
    the side with the smallest node), leaves a connected remainder whose unit
    pieces stay connected, and has a compatible boundary edge.
    """
    a = np.asarray(assignment)
    D = as_fraction(pop_tol)
    total = graph.total_pop
    parts = [np.flatnonzero(a == i).tolist() for i in range(n)]
    pops = [int(graph.pop[p].sum()) for p in parts]
    memo: dict[int, int] = {}
    full = (1 << n) - 1

    def nodes_of(mask):
        out = []
        for i in range(n):
            if mask >> i & 1:
                out.extend(parts[i])
        return out

    def units_ok(nodes):
        if labeling is None:
            return True
        for lv in range(labeling.n_levels):
            codes = labeling.codes[lv]
            groups: dict[int, list[int]] = {}
            for v in nodes:
                groups.setdefault(int(codes[v]), []).append(v)
            if any(not is_connected(graph, g) for g in groups.values()):
                return False
        return True

    def rec(mask):
        if mask in memo:
            return memo[mask]
        left = bin(mask).count("1")
        if left == 1:
            return 1
        stage = n - left + 1
        rpop = sum(pops[i] for i in range(n) if mask >> i & 1)
        lo, hi = scaled_bounds(stage, rpop, total, n, D)
        scale = n * D.denominator
        count = 0
        for i in range(n):
            if not mask >> i & 1:
                continue
            rest = mask & ~(1 << i)
            if not lo <= scale * pops[i] <= hi:
                continue
            d1 = abs(n * pops[i] - total)
            d2 = abs(n * (rpop - pops[i]) - total)
            rest_nodes = nodes_of(rest)
            if d1 > d2 or (d1 == d2 and parts[i][0] > min(rest_nodes)):
                continue
            if not is_connected(graph, rest_nodes) or not units_ok(rest_nodes):
                continue
            if compatible_boundary_count(graph, parts[i], rest_nodes, labeling) < 1:
                continue
            count += rec(rest)
        memo[mask] = count
        return count

    return rec(full)


# ---------------------------------------------------------------------------
# the sampler

def _split_slots(ctx: dict, slots: Sequence[int]) -> list[tuple]:
    graph = ctx["graph"]
    labeling = ctx["labeling"]
    remainders = ctx["remainders"]
    cum = ctx["cum"]
    stage = ctx["stage"]
    n, D, k = ctx["n"], ctx["D"], ctx["k"]
    rho, constraints = ctx["rho"], ctx["constraints"]
    max_attempts = ctx["max_attempts"]
    seed = ctx["seed"]
    n_par = len(remainders)
    out = []
    for j in slots:
        rng = RngStream(seed, (_SLOT, stage, j))
        clamped = False
        for attempt in range(1, max_attempts + 1):
            if cum is None:
                parent = int(rng.random() * n_par)
            else:
                parent = min(bisect_right(cum, rng.random() * cum[-1]), n_par - 1)
            rem = remainders[parent]
            k_eff = min(k, len(rem) - 1)
            clamped |= k_eff < k
            params = SplitParams(n, D, k_eff, stage)
            res = split_district(graph, rem, params, labeling, rng)
            if res.accepted:
                break
        else:
            raise StageStarvedError(
                f"stage {stage}: slot {j} saw {max_attempts} consecutive rejections",
                {"stage": stage, "slot": j, "attempts": max_attempts},
            )
        lw = incremental_log_weight(graph, res.district, res.remainder, k_eff, rho, labeling, constraints)
        out.append((parent, res.district, attempt, lw, k_eff, clamped))
    return out


def _check_labeling(graph: Graph, labeling: Labeling):
    for lv in range(labeling.n_levels):
        codes = labeling.codes[lv]
        for u in range(labeling.n_units(lv)):
            nodes = np.flatnonzero(codes == u).tolist()
            if not is_connected(graph, nodes):
                raise GraphError(
                    f"unit {labeling.unit_name(lv, u)!r} at level {labeling.names[lv]!r} is not connected"
                )


def run_smc(config: SmcConfig, graph: Graph) -> WeightedEnsemble:
    """Run the sampler and return the weighted ensemble."""
    config.validate()
    if not graph.connected:
        raise GraphError("graph is not connected")
    if graph.total_pop <= 0:
        raise GraphError("graph has zero total population")
    S, n, m = config.n_particles, config.n_districts, graph.m
    if n > m:
        raise ValueError("more districts than nodes")
    D = config.D
    seed = int(np.random.SeedSequence(config.seed).entropy)
    labeling = Labeling(graph, config.admin_levels) if config.admin_levels else None
    if labeling is not None:
        _check_labeling(graph, labeling)
    max_attempts = config.max_attempts or 1000 * S
    total = graph.total_pop

    assign = np.full((S, m), -1, dtype=np.int16 if n < 32000 else np.int32)
    stage_lw = np.zeros((S, n - 1))
    diag: dict = {"seed": seed, "stages": []}

    for stage in range(1, n):
        t0 = time.perf_counter()
        if stage == 1:
            remainders = [list(range(m))]
            cum = None
            parents_pool = np.zeros(1, dtype=np.int64)
        else:
            remainders = [np.flatnonzero(row < 0).tolist() for row in assign]
            probs = resampling_probabilities(stage_lw[:, stage - 2], config.alpha)
            cum = None if config.alpha == 0 else list(accumulate(probs.tolist()))
            parents_pool = np.arange(S)

        # infeasible bounds for every parent means no split can ever succeed
        feasible = False
        for rem in remainders:
            rpop = int(graph.pop[rem].sum())
            lo, hi = scaled_bounds(stage, rpop, total, n, D)
            if lo <= hi:
                feasible = True
                break
        if not feasible:
            raise InfeasibleError(f"stage {stage}: population bounds are empty for every partial plan")

        k_fixed = config.k_for_stage(stage)
        ksel = None
        if k_fixed is None:
            krng = RngStream(seed, (_KSEL, stage))
            if cum is None:
                idx = [int(krng.random() * len(remainders)) for _ in range(config.n_trees())]
            else:
                idx = [min(bisect_right(cum, krng.random() * cum[-1]), len(remainders) - 1)
                       for _ in range(config.n_trees())]
            ksel = select_k(graph, [remainders[i] for i in idx], D, n, config.k_threshold,
                            config.n_trees(), labeling, krng)
            k = ksel.k
        else:
            k = k_fixed

        ctx = dict(graph=graph, labeling=labeling, remainders=remainders, cum=cum, stage=stage,
                   n=n, D=D, k=k, rho=config.rho, constraints=config.constraints,
                   max_attempts=max_attempts, seed=seed)
        results = _dispatch(ctx, S, config.n_jobs)

        parents = np.asarray([r[0] for r in results], dtype=np.int64)
        attempts = int(sum(r[2] for r in results))
        parents_abs = parents_pool[parents] if stage == 1 else parents
        new_assign = assign[parents_abs].copy()
        new_lw = stage_lw[parents_abs].copy()
        for j, r in enumerate(results):
            new_assign[j, r[1]] = stage - 1
            new_lw[j, stage - 1] = r[3]
        assign, stage_lw = new_assign, new_lw
        n_clamped = sum(1 for r in results if r[5])
        if n_clamped:
            warnings.warn(f"stage {stage}: k={k} exceeded the tree size for {n_clamped} slots; clamped",
                          KClampWarning, stacklevel=2)
        info = {
            "stage": stage, "k": int(k), "attempts": attempts, "accepted": S,
            "acceptance_rate": S / attempts, "unique_parents": int(np.unique(parents).size),
            "k_clamped": n_clamped, "seconds": time.perf_counter() - t0,
        }
        if ksel is not None:
            info["k_hat"] = int(ksel.k_hat)
        diag["stages"].append(info)

    if config.alpha > 0 and config.terminal == "resample":
        idx = resample_stage(stage_lw[:, n - 2], config.alpha, RngStream(seed, (_TERMINAL,)))
        assign, stage_lw = assign[idx], stage_lw[idx]
    assign[assign < 0] = n - 1

    raw = np.empty(S)
    for j in range(S):
        raw[j] = final_log_weight(graph, assign[j], stage_lw[j], config.alpha, config.rho,
                                  config.constraints, labeling)
    if config.terminal == "weight":
        # the last stage's alpha share, charged as weight instead of by resampling
        raw += config.alpha * stage_lw[:, n - 2]
    if config.correct_ordering:
        cache: dict = {}
        for j in range(S):
            if raw[j] == NEG_INF:
                continue
            key = assign[j].tobytes()
            if key not in cache:
                cache[key] = count_orderings(graph, assign[j], n, D, labeling)
            raw[j] -= math.log(cache[key])
    if not np.isfinite(raw).any():
        raise SMCError("every particle violates a hard constraint")
    cap = truncation_cap(config.truncation, S)
    final = truncate_weights(raw, config.truncation, S) if cap is not None else raw.copy()

    diag["acceptance_rates"] = [s["acceptance_rate"] for s in diag["stages"]]
    diag["k"] = [s["k"] for s in diag["stages"]]
    ens = WeightedEnsemble(assign.astype(np.int64), n, stage_lw, raw, final, diag)
    if config.final_resample:
        ens.resample_index = ens.resample(S, RngStream(seed, (_FINAL,)).generator())
    return ens


def _dispatch(ctx: dict, S: int, n_jobs: int) -> list[tuple]:
    if n_jobs is None or n_jobs == 1 or S < 2:
        return _split_slots(ctx, range(S))
    from joblib import Parallel, delayed, effective_n_jobs

    jobs = max(1, min(effective_n_jobs(n_jobs), S))
    bounds = np.linspace(0, S, jobs + 1).astype(int)
    chunks = [range(bounds[i], bounds[i + 1]) for i in range(jobs) if bounds[i] < bounds[i + 1]]
    parts = Parallel(n_jobs=jobs)(delayed(_split_slots)(ctx, c) for c in chunks)
    return [r for p in parts for r in p]
