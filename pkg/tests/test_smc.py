import math
from collections import defaultdict
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import brute_spanning_trees, tv
from redist_smc.constraints import ConstraintSpec, HardPredicate, IncumbentPairing
from redist_smc.enumerate import enumerate_partitions, reweight_reference
from redist_smc.graph import Graph, Labeling, canonical_form
from redist_smc.metrics import dev_exact, ess_importance, spl
from redist_smc.rng import RngStream
from redist_smc.smc import (SMCError, SmcConfig, StageStarvedError, compatible_boundary_count,
                            count_orderings, final_log_weight, incremental_log_weight,
                            resample_stage, resampling_probabilities, run_smc, select_k,
                            truncate_weights, truncation_cap)
from redist_smc.synthetic import grid_graph
from redist_smc.ust import SpanningTree


# ---------------------------------------------------------------------------
# weights

def test_incremental_weight_formula_example():
    g = grid_graph(3, 3, pop=[1] * 9)
    rest = [v for v in range(9) if v != 4]
    assert incremental_log_weight(g, [4], rest, 1, 1.0) == pytest.approx(-math.log(4))


def test_single_node_district_has_no_tree_term():
    g = grid_graph(3, 3, pop=[1] * 9)
    rest = [v for v in range(9) if v != 4]
    for rho in (0.0, 0.5, 2.0):
        assert incremental_log_weight(g, [4], rest, 3, rho) == pytest.approx(math.log(3) - math.log(4))


def test_incremental_weight_tree_term():
    g = grid_graph(2, 4, pop=[1] * 8)
    d = [0, 1, 4, 5]
    rest = [2, 3, 6, 7]
    expect = (0.5 - 1) * math.log(4) + math.log(2) - math.log(2)
    assert incremental_log_weight(g, d, rest, 2, 0.5) == pytest.approx(expect)


def test_incremental_weight_charges_district_penalty():
    g = grid_graph(1, 4, pop=[1] * 4, attrs={"inc": [1, 1, 0, 0]})
    cons = ConstraintSpec([IncumbentPairing("inc", 2.0)])
    w0 = incremental_log_weight(g, [0, 1], [2, 3], 1, 1.0)
    assert incremental_log_weight(g, [0, 1], [2, 3], 1, 1.0, constraints=cons) == pytest.approx(w0 - 2.0)


def test_zero_boundary_is_an_internal_error():
    g = Graph(list("ab"), [1, 1], [])
    with pytest.raises(AssertionError):
        incremental_log_weight(g, [0], [1], 1, 1.0)


def test_final_weight_vanishes_for_full_temper():
    g = grid_graph(2, 2, pop=[1] * 4)
    assert final_log_weight(g, np.array([0, 0, 1, 1]), [-1.3], 1.0, 1.0) == 0.0


def test_final_weight_formula():
    g = grid_graph(2, 4, pop=[1] * 8)
    a = np.array([0, 0, 1, 1, 0, 0, 1, 1])
    got = final_log_weight(g, a, [-0.7], 0.25, 2.0)
    assert got == pytest.approx(0.75 * -0.7 + 1.0 * math.log(4))


def test_final_weight_hard_constraint_gives_minus_inf():
    g = grid_graph(2, 2, pop=[1] * 4)
    cons = ConstraintSpec([HardPredicate(lambda graph, a: False)])
    assert final_log_weight(g, np.array([0, 0, 1, 1]), [0.0], 0.5, 1.0, cons) == -math.inf


# ---------------------------------------------------------------------------
# resampling and truncation

def test_single_particle_always_resamples_itself():
    assert (resample_stage([0.3], 0.5, RngStream(1), 100) == 0).all()


def test_resampling_frequencies_follow_weights():
    idx = resample_stage(np.log([2.0, 1.0]), 1.0, RngStream(2), 100_000)
    freq = np.bincount(idx, minlength=2) / idx.size
    se = math.sqrt(2 / 9 / idx.size)
    assert abs(freq[0] - 2 / 3) < 4 * se


def test_zero_alpha_is_uniform():
    assert np.allclose(resampling_probabilities([0.0, 5.0, -3.0], 0.0), 1 / 3)


def test_all_zero_weights_abort():
    with pytest.raises(SMCError):
        resampling_probabilities([-math.inf, -math.inf], 0.5)


def test_truncation_equal_weights():
    lw = np.full(50, 3.2)
    assert np.allclose(truncate_weights(lw, None), 0.0)
    cap = truncation_cap("S^0.4/100", 50)
    assert cap < 1
    assert np.allclose(truncate_weights(lw, "S^0.4/100"), math.log(cap))


def test_truncation_clamps_outlier_exactly():
    lw = np.zeros(100)
    lw[7] = 20.0
    out = truncate_weights(lw, 5.0)
    assert out[7] == math.log(5.0)
    assert np.all(out[np.arange(100) != 7] < math.log(5.0))


def test_truncation_rule_parsing():
    assert truncation_cap("S^0.5/2", 100) == pytest.approx(5.0)
    assert truncation_cap("none", 100) is None
    assert truncation_cap(3, 100) == 3.0
    with pytest.raises(ValueError):
        truncation_cap("sqrt", 100)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_truncation_never_lowers_ess_on_heavy_tails(seed):
    rng = np.random.default_rng(seed)
    lw = np.log(rng.pareto(1.1, size=500) + 1e-12)
    assert ess_importance(truncate_weights(lw, 3.0)) >= ess_importance(lw) - 1e-9


# ---------------------------------------------------------------------------
# k selection

def path(pops):
    return Graph([str(i) for i in range(len(pops))], pops, [(i, i + 1) for i in range(len(pops) - 1)])


def test_select_k_single_tree_graph_gives_one():
    g = path([2, 1, 1, 2, 3, 1])
    assert select_k(g, list(range(6)), 0.1, 2, 0.95, 20, rng=RngStream(0)).k == 1


def test_select_k_needs_two_trees():
    with pytest.raises(ValueError):
        select_k(path([1, 1]), [0, 1], 0.1, 2, 0.95, 1)


def test_select_k_is_reproducible():
    g = grid_graph(4, 4, seed=1)
    a = select_k(g, list(range(16)), 0.1, 2, 0.95, 50, rng=RngStream(4, (1,)))
    b = select_k(g, list(range(16)), 0.1, 2, 0.95, 50, rng=RngStream(4, (1,)))
    assert a == b


def test_select_k_monotone_in_threshold():
    g = grid_graph(4, 4, seed=2)
    ks = [select_k(g, list(range(16)), 0.2, 2, t, 60, rng=RngStream(8)).k for t in (0.5, 0.8, 0.95, 0.99)]
    assert ks == sorted(ks)


def exact_max_ok(graph, n, D):
    """Largest number of within-tolerance edges over every spanning tree."""
    D = Fraction(D)
    total = graph.total_pop
    best = 0
    for t in brute_spanning_trees(graph):
        edges = [graph.edges[i] for i in t]
        tree = SpanningTree.from_edges(graph, range(graph.m), edges, 0)
        ok = 0
        for v in tree.order[1:]:
            s = tree.subtree_pop[v]
            if min(abs(n * s - total), abs(n * (total - s) - total)) <= D * total:
                ok += 1
        best = max(best, ok)
    return best


def test_select_k_near_one_threshold_reaches_true_max():
    g = Graph(list("abcde"), [2, 1, 2, 1, 2], [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (1, 3)])
    K = exact_max_ok(g, 2, Fraction(1, 2))
    assert K >= 2
    got = select_k(g, list(range(5)), Fraction(1, 2), 2, 0.999, 400, rng=RngStream(3)).k
    assert got >= K


# ---------------------------------------------------------------------------
# full runs

def test_two_by_two_two_plans_equal_mass():
    g = grid_graph(2, 2, pop=[1] * 4)
    ens = run_smc(SmcConfig(1000, 2, 0, rho=1.0, k=1, seed=5), g)
    forms = [canonical_form(a) for a in ens.assignments]
    w = ens.normalized_weights()
    mass = defaultdict(float)
    for f, wi in zip(forms, w):
        mass[f] += wi
    assert len(mass) == 2
    assert all(abs(v - 0.5) < 0.06 for v in mass.values())


def test_runs_are_deterministic_across_job_counts():
    g = grid_graph(4, 4, seed=1)
    cfg = dict(n_particles=60, n_districts=3, pop_tol=0.2, rho=0.7, k=4, seed=17)
    a = run_smc(SmcConfig(**cfg, n_jobs=1), g)
    b = run_smc(SmcConfig(**cfg, n_jobs=2), g)
    assert np.array_equal(a.assignments, b.assignments)
    assert np.array_equal(a.log_weights, b.log_weights)


def test_every_plan_satisfies_tolerance_and_split_support():
    g = grid_graph(4, 4, seed=6, blocks={"county": (2, 2)})
    lab = Labeling(g, ["county"])
    ens = run_smc(SmcConfig(300, 3, 0.25, k=4, seed=3, admin_levels=["county"]), g)
    for a in ens.assignments:
        assert dev_exact(a, g, 3) <= Fraction(1, 4)
        assert spl(a, g, lab) <= 2


def test_starved_stage_raises_with_diagnostics():
    g = path([1, 1, 10])
    with pytest.raises(StageStarvedError) as info:
        run_smc(SmcConfig(5, 2, 0.1, k=2, seed=0, max_attempts=30), g)
    assert info.value.diagnostics["stage"] == 1


def test_config_validation():
    with pytest.raises(ValueError):
        SmcConfig(0, 2)
    with pytest.raises(ValueError):
        SmcConfig(10, 2, alpha=1.5)
    with pytest.raises(ValueError):
        SmcConfig(10, 3, k=[1])
    with pytest.raises(ValueError):
        SmcConfig(10, 2, k_threshold=1.0)


def test_diagnostics_are_recorded():
    g = grid_graph(4, 4, seed=1)
    ens = run_smc(SmcConfig(50, 3, 0.3, seed=2), g)
    assert len(ens.diagnostics["stages"]) == 2
    for s in ens.diagnostics["stages"]:
        assert 0 < s["acceptance_rate"] <= 1 and s["k"] >= 1 and "k_hat" in s


def test_terminal_resample_variant_matches_final_weight_formula():
    g = grid_graph(4, 4, seed=1)
    ens = run_smc(SmcConfig(40, 2, 0.2, rho=1.0, alpha=1.0, k=3, seed=4, terminal="resample"), g)
    assert np.allclose(ens.raw_log_weights, 0.0)


# ---------------------------------------------------------------------------
# exact path-sum oracle for three districts

def _exact_split_probs(graph, rem, n, D, k, stage):
    """P(one attempt on ``rem`` yields district d and is accepted), by tree enumeration."""
    D = Fraction(D)
    total = graph.total_pop
    rem = sorted(rem)
    trees = brute_spanning_trees(graph, rem)
    R = sum(int(graph.pop[v]) for v in rem)
    lo = max(Fraction(total, n) * (1 - D), R - Fraction(n - stage, n) * total * (1 + D))
    hi = min(Fraction(total, n) * (1 + D), R - Fraction(n - stage, n) * total * (1 - D))
    out = defaultdict(float)
    for t in trees:
        edges = [graph.edges[i] for i in t]
        scored = []
        for e in edges:
            others = [x for x in edges if x != e]
            side = {e[0]}
            grow = True
            while grow:
                grow = False
                for a, b in others:
                    if (a in side) != (b in side):
                        side |= {a, b}
                        grow = True
            other = [v for v in rem if v not in side]
            p1 = sum(int(graph.pop[v]) for v in side)
            d1, d2 = abs(n * p1 - total), abs(n * (R - p1) - total)
            scored.append((min(d1, d2), e, sorted(side), other, p1))
        scored.sort(key=lambda s: (s[0], s[1]))
        kk = min(k, len(scored))
        for key, e, side, other, p1 in scored[:kk]:
            d1, d2 = abs(n * p1 - total), abs(n * (R - p1) - total)
            if d1 < d2 or (d1 == d2 and side[0] < other[0]):
                dist, dpop = side, p1
            else:
                dist, dpop = other, R - p1
            if lo <= dpop <= hi:
                out[frozenset(dist)] += 1.0 / (len(trees) * kk)
    return out


def test_ordering_count_explains_path_sum_bias():
    g = Graph(list("abcdef"), [2, 1, 2, 2, 1, 2],
              [(0, 1), (1, 2), (0, 3), (1, 4), (2, 5), (3, 4), (4, 5)])
    n, D, rho = 3, Fraction(1, 2), 1.0
    k = 10
    mass = defaultdict(float)
    s1 = _exact_split_probs(g, range(6), n, D, k, 1)
    for d1, p1 in s1.items():
        rest1 = [v for v in range(6) if v not in d1]
        w1 = math.exp(incremental_log_weight(g, sorted(d1), rest1, min(k, 5), rho))
        for d2, p2 in _exact_split_probs(g, rest1, n, D, k, 2).items():
            rest2 = [v for v in rest1 if v not in d2]
            w2 = math.exp(incremental_log_weight(g, sorted(d2), rest2, min(k, len(rest1) - 1), rho))
            a = np.zeros(6, dtype=int)
            a[sorted(d1)] = 0
            a[sorted(d2)] = 1
            a[rest2] = 2
            mass[canonical_form(a)] += p1 * w1 * p2 * w2
    ref = enumerate_partitions(g, n, D)
    assert set(mass) == {tuple(p) for p in ref.plans}
    ratios = []
    counts = []
    for p in ref.plans:
        N = count_orderings(g, p, n, D)
        counts.append(N)
        ratios.append(mass[tuple(p)] / N)
    assert max(counts) > min(counts)  # the instance has unequal ordering counts
    assert np.allclose(ratios, ratios[0], rtol=1e-9)


def test_ordering_correction_recovers_target():
    g = Graph(list("abcdef"), [2, 1, 2, 2, 1, 2],
              [(0, 1), (1, 2), (0, 3), (1, 4), (2, 5), (3, 4), (4, 5)])
    ref = enumerate_partitions(g, 3, 0.5)
    target = reweight_reference(ref, 1.0)
    ens = run_smc(SmcConfig(6000, 3, 0.5, rho=1.0, k=10, seed=9, correct_ordering=True), g)
    freq = np.zeros(len(ref))
    for a, w in zip(ens.assignments, ens.normalized_weights()):
        freq[ref.index_of(a)] += w
    assert tv(freq, target) < 0.05


def test_compatible_boundary_count_with_units():
    g = grid_graph(2, 4, pop=[1] * 8, blocks={"county": (2, 2)})
    lab = Labeling(g, ["county"])
    # counties {0,1,4,5} and {2,3,6,7}; split the right county horizontally
    a = [0, 1, 4, 5, 2, 3]
    b = [6, 7]
    assert compatible_boundary_count(g, a, b, lab) == 2
    # two counties split at once: no compatible edge
    assert compatible_boundary_count(g, [0, 1, 2, 3], [4, 5, 6, 7], lab) == 0
    # no split unit: every cross edge counts
    assert compatible_boundary_count(g, [0, 1, 4, 5], [2, 3, 6, 7], lab) == 2
