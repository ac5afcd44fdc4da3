"""Merge-split Metropolis-Hastings chain targeting ``exp(-J) * tau(plan)^rho``.

One step picks a uniformly random pair of adjacent districts, merges them,
draws a uniform spanning tree on the union and cuts one of its ``k`` best
edges.  With ``k`` equal to the number of tree edges the proposal probability
of the split ``(A', B')`` is ``tau(A') tau(B') |C(A', B')| / (tau(M) (|M|-1))``,
so the acceptance ratio reduces to

    (tau(A') tau(B') / (tau(A) tau(B)))^(rho-1)
    * |C(A, B)| / |C(A', B')|
    * adj(plan) / adj(plan')
    * exp(J(plan) - J(plan'))

where ``adj`` counts adjacent district pairs.  A smaller ``k`` uses the same
ratio and is only approximately invariant.  With a labeling, ``tau`` becomes
the unit-respecting count and ``C`` the compatible boundary count.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .constraints import ConstraintSpec
from .graph import Graph, GraphError, Labeling, Plan, log_tau_eta_nodes
from .metrics import spl
from .rng import as_stream
from .smc import SmcConfig, compatible_boundary_count, run_smc
from .splitter import as_fraction, edge_deviations
from .ust import sample_hierarchical_ust


@dataclass
class MergeSplitParams:
    n: int
    D: object
    rho: float = 1.0
    constraints: ConstraintSpec = field(default_factory=ConstraintSpec)
    k: int | None = None
    labeling: Labeling | None = None

    def __post_init__(self):
        self.D = as_fraction(self.D)
        if self.n < 2:
            raise ValueError("merge-split needs at least two districts")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")
        if self.constraints is None:
            self.constraints = ConstraintSpec()


@dataclass
class ChainState:
    assignment: np.ndarray
    log_tau: np.ndarray  # per district, unit-respecting when a labeling is set
    J: float
    n_adjacent: int
    iteration: int = 0
    accepted: int = 0

    @property
    def plan(self) -> Plan:
        return Plan(self.assignment, len(self.log_tau))

    @property
    def acceptance_rate(self) -> float:
        return self.accepted / self.iteration if self.iteration else 0.0


def adjacent_pairs(graph: Graph, assignment: np.ndarray) -> list[tuple[int, int]]:
    e = np.asarray(graph.edges)
    a, b = assignment[e[:, 0]], assignment[e[:, 1]]
    cut = a != b
    lo, hi = np.minimum(a[cut], b[cut]), np.maximum(a[cut], b[cut])
    return sorted(set(zip(lo.tolist(), hi.tolist())))


def _in_support(graph: Graph, assignment: np.ndarray, params: MergeSplitParams) -> bool:
    lab = params.labeling
    if lab is None:
        return True
    return all(spl(assignment, graph, lab, lv) <= params.n - 1 for lv in range(lab.n_levels))


def init_state(graph: Graph, plan, params: MergeSplitParams) -> ChainState:
    """Chain state for a valid plan; raises if the plan is outside the support."""
    a = np.asarray(plan.assignment if isinstance(plan, Plan) else plan, dtype=np.int64).copy()
    if a.shape != (graph.m,):
        raise ValueError("assignment length does not match the graph")
    n = params.n
    if int(a.max()) + 1 != n or int(a.min()) != 0:
        raise ValueError(f"initial plan must use districts 0..{n - 1}")
    pops = np.bincount(a, weights=graph.pop, minlength=n)
    D = params.D
    total = graph.total_pop
    if any(abs(n * int(p) - total) * D.denominator > D.numerator * total for p in pops):
        raise ValueError("initial plan violates the population tolerance")
    lt = np.array([log_tau_eta_nodes(graph, np.flatnonzero(a == i).tolist(), params.labeling)
                   for i in range(n)])
    if not np.isfinite(lt).all():
        raise ValueError("initial plan has a disconnected district")
    if not _in_support(graph, a, params):
        raise ValueError("initial plan splits more units than allowed")
    J = params.constraints(graph, a) if params.constraints else 0.0
    if J == math.inf:
        raise ValueError("initial plan violates a hard constraint")
    return ChainState(a, lt, J, len(adjacent_pairs(graph, a)))


def check_state(graph: Graph, state: ChainState, params: MergeSplitParams, tol: float = 1e-9):
    """Recompute cached values from scratch and assert they match."""
    fresh = init_state(graph, state.assignment, params)
    assert np.allclose(fresh.log_tau, state.log_tau, rtol=0, atol=tol), "cached log tau diverged"
    assert abs(fresh.J - state.J) <= tol, "cached J diverged"
    assert fresh.n_adjacent == state.n_adjacent, "cached adjacency count diverged"


def merge_split_step(graph: Graph, state: ChainState, params: MergeSplitParams, rng=None,
                     check_cache: bool = False) -> ChainState:
    """One merge-split proposal with its Metropolis-Hastings accept/reject (in place)."""
    rng = as_stream(rng)
    a = state.assignment
    pairs = adjacent_pairs(graph, a)
    if not pairs:
        raise GraphError("no adjacent district pair to merge")
    state.iteration += 1
    i, j = pairs[rng.below(len(pairs))]
    merged = np.flatnonzero((a == i) | (a == j)).tolist()
    lab = params.labeling
    tree = sample_hierarchical_ust(graph, lab, rng, merged, check=False)
    scores = edge_deviations(tree, graph.total_pop, params.n)
    k = len(scores) if params.k is None else min(params.k, len(scores))
    cut = scores[rng.below(k)]

    side = tree.subtree(cut.child)
    n, total, D = params.n, graph.total_pop, params.D
    s1 = tree.subtree_pop[cut.child]
    s2 = tree.subtree_pop[tree.root] - s1
    if max(abs(n * s1 - total), abs(n * s2 - total)) * D.denominator > D.numerator * total:
        return state
    # the piece holding the smallest merged node keeps label i
    in_side = set(side)
    other = [v for v in merged if v not in in_side]
    new = a.copy()
    lab_side, lab_other = (i, j) if merged[0] in in_side else (j, i)
    new[side] = lab_side
    new[other] = lab_other
    a_nodes = np.flatnonzero(new == i).tolist()
    b_nodes = np.flatnonzero(new == j).tolist()

    c_old = compatible_boundary_count(graph, np.flatnonzero(a == i).tolist(),
                                      np.flatnonzero(a == j).tolist(), lab)
    if c_old == 0:
        return state  # reverse move impossible
    c_new = compatible_boundary_count(graph, a_nodes, b_nodes, lab)
    if lab is not None and not _in_support(graph, new, params):
        return state
    J_new = params.constraints(graph, new) if params.constraints else 0.0
    if J_new == math.inf:
        return state
    lt_a = log_tau_eta_nodes(graph, a_nodes, lab) if params.rho != 1 or check_cache else 0.0
    lt_b = log_tau_eta_nodes(graph, b_nodes, lab) if params.rho != 1 or check_cache else 0.0
    adj_new = len(adjacent_pairs(graph, new))

    log_r = math.log(c_old) - math.log(c_new) + math.log(len(pairs)) - math.log(adj_new)
    log_r += state.J - J_new
    if params.rho != 1:
        log_r += (params.rho - 1) * (lt_a + lt_b - state.log_tau[i] - state.log_tau[j])
    if log_r >= 0 or rng.random() < math.exp(log_r):
        state.assignment = new
        if params.rho != 1 or check_cache:
            state.log_tau = state.log_tau.copy()
            state.log_tau[i], state.log_tau[j] = lt_a, lt_b
        state.J = J_new
        state.n_adjacent = adj_new
        state.accepted += 1
    if check_cache:
        check_state(graph, state, params)
    return state


@dataclass
class ChainResult:
    assignments: np.ndarray  # (samples, m), 0-based districts
    iterations: np.ndarray   # iteration number of each sample
    acceptance_rate: float

    def __len__(self):
        return len(self.assignments)

    @property
    def plans(self) -> list[Plan]:
        n = int(self.assignments.max()) + 1 if len(self) else 0
        return [Plan(x, n) for x in self.assignments]


def run_chain(graph: Graph, initial, iterations: int, params: MergeSplitParams, rng=None,
              burn_in: int = 0, thin: int = 1, check_cache: bool = False) -> ChainResult:
    """Run the chain and keep the states after iterations ``burn_in + thin, burn_in + 2*thin, ...``."""
    if iterations < 0 or burn_in < 0 or thin < 1:
        raise ValueError("iterations and burn_in must be nonnegative and thin positive")
    rng = as_stream(rng)
    state = init_state(graph, initial, params)
    if params.rho == 1 and not check_cache:
        state.log_tau = np.zeros(params.n)  # unused when rho == 1
    keep = max(0, (iterations - burn_in) // thin)
    out = np.empty((keep, graph.m), dtype=np.int16 if params.n < 32000 else np.int32)
    its = np.empty(keep, dtype=np.int64)
    r = 0
    for t in range(1, iterations + 1):
        merge_split_step(graph, state, params, rng, check_cache)
        if t > burn_in and (t - burn_in) % thin == 0:
            out[r] = state.assignment
            its[r] = t
            r += 1
    return ChainResult(out.astype(np.int64), its, state.acceptance_rate)


def initial_plan(graph: Graph, params: MergeSplitParams, seed=None) -> np.ndarray:
    """One valid plan from a single-particle SMC pass."""
    cfg = SmcConfig(n_particles=1, n_districts=params.n, pop_tol=params.D, rho=1.0, alpha=0.5,
                    admin_levels=None if params.labeling is None else list(params.labeling.names),
                    seed=seed)
    return run_smc(cfg, graph).assignments[0]
