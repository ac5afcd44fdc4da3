import math
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import entropy
from sklearn.metrics import mutual_info_score

from redist_smc.graph import Labeling
from redist_smc.metrics import (dev, dev_exact, dissimilarity_index, district_shares, ess_importance,
                                ess_importance_h, ess_mcmc, gerrymandering_index, gerrymandering_indices,
                                grouped_deviations,
                                pairwise_vi, rem, spl, unique_plans, variation_of_information,
                                weighted_quantiles)
from redist_smc.synthetic import grid_graph

G = grid_graph(3, 3, seed=7, attrs={"grp": [3, 0, 1, 2, 2, 0, 1, 1, 4]})
plans_3x3 = st.lists(st.integers(0, 2), min_size=9, max_size=9).filter(lambda x: len(set(x)) == 3)


def vi_oracle(a, b, pop):
    """Halved VI from a population-weighted contingency table."""
    table = np.zeros((max(a) + 1, max(b) + 1))
    for x, y, w in zip(a, b, pop):
        table[x, y] += w
    ha = entropy(table.sum(axis=1))
    hb = entropy(table.sum(axis=0))
    mi = mutual_info_score(None, None, contingency=table)
    return (ha + hb - 2 * mi) / 2


@settings(max_examples=60, deadline=None)
@given(plans_3x3, plans_3x3)
def test_vi_matches_contingency_oracle(a, b):
    got = variation_of_information(np.array(a), np.array(b), G)
    assert got == pytest.approx(vi_oracle(a, b, G.pop.tolist()), abs=1e-10)


@settings(max_examples=60, deadline=None)
@given(plans_3x3, plans_3x3, plans_3x3)
def test_vi_is_a_pseudometric(a, b, c):
    a, b, c = map(np.array, (a, b, c))
    ab = variation_of_information(a, b, G)
    assert ab == pytest.approx(variation_of_information(b, a, G))
    assert ab <= variation_of_information(a, c, G) + variation_of_information(c, b, G) + 1e-12
    assert 0 <= ab <= math.log(3) + 1e-12


def test_vi_zero_for_relabeling_and_log_n_for_orthogonal():
    g = grid_graph(2, 2, pop=[1] * 4)
    a = np.array([0, 0, 1, 1])
    assert variation_of_information(a, 1 - a, g) == 0
    assert variation_of_information(a, np.array([0, 1, 0, 1]), g) == pytest.approx(math.log(2))
    assert pairwise_vi([a, 1 - a, np.array([0, 1, 0, 1])], g).tolist() == pytest.approx(
        [0, math.log(2), math.log(2)])


def test_dev_and_rem_examples():
    g = grid_graph(2, 2, pop=[1, 2, 3, 4])
    a = np.array([0, 0, 1, 1])
    assert dev_exact(a, g) == Fraction(2, 5)
    assert dev(a, g) == pytest.approx(0.4)
    assert rem(a, g) == 0.5


def test_spl_counts_extra_pieces():
    g = grid_graph(2, 4, pop=[1] * 8, blocks={"county": (2, 2)})
    lab = Labeling(g, ["county"])
    assert spl(np.array([0, 0, 1, 1, 0, 0, 1, 1]), g, lab) == 0
    assert spl(np.array([0, 0, 0, 1, 0, 0, 1, 1]), g, lab) == 1
    # one district holding two disconnected pieces of a unit counts twice
    g2 = grid_graph(1, 3, pop=[1] * 3)
    g2.units["u"] = ("A", "A", "A")
    assert spl(np.array([0, 1, 0]), g2, Labeling(g2, ["u"])) == 2


def dissimilarity_oracle(a, group, total):
    ds = sorted(set(a))
    G_, T_ = sum(group), sum(total)
    out = 0.0
    for d in ds:
        g = sum(x for x, l in zip(group, a) if l == d)
        t = sum(x for x, l in zip(total, a) if l == d)
        out += abs(g / G_ - (t - g) / (T_ - G_))
    return out / 2


@settings(max_examples=40, deadline=None)
@given(plans_3x3)
def test_dissimilarity_matches_oracle(a):
    got = dissimilarity_index(np.array(a), G, "grp")
    assert got == pytest.approx(dissimilarity_oracle(a, G.attrs["grp"].tolist(), G.pop.tolist()))


def test_gerrymandering_index_and_grouped_deviations():
    ens = np.array([[0.3, 0.6], [0.5, 0.4]])
    assert gerrymandering_index([0.2, 0.9], ens) == pytest.approx((0.2 - 0.35) ** 2 + (0.9 - 0.55) ** 2)
    dv = grouped_deviations([0.2, 0.9], np.array([[0.3, 0.6], [0.4, 0.5], [0.35, 0.7]]), [[0], [1], [0, 1]])
    assert dv.tolist() == pytest.approx([0.2 - 0.35, 0.9 - 0.6, 0.2 - 0.35 + 0.9 - 0.6])


def test_district_shares_sorted():
    g = grid_graph(1, 4, pop=[1] * 4, attrs={"d": [3, 1, 1, 1], "r": [1, 3, 1, 1]})
    assert district_shares(np.array([0, 0, 1, 1]), g, "d", "r").tolist() == [0.5, 0.5]
    assert district_shares(np.array([0, 1, 1, 1]), g, "d", "r").tolist() == pytest.approx([0.375, 0.75])


def test_importance_ess():
    assert ess_importance(np.zeros(50)) == pytest.approx(50)
    assert ess_importance([0.0, -np.inf, 0.0]) == pytest.approx(2)
    w = np.array([1.0, 2.0, 3.0])
    assert ess_importance(np.log(w)) == pytest.approx(w.sum() ** 2 / (w ** 2).sum())
    assert ess_importance_h(np.zeros(4), [1, 1, 1, 1]) == pytest.approx(4)
    assert ess_importance_h(np.zeros(4), [0, 0, 1, 1]) == pytest.approx(4)


def test_mcmc_ess_iid_and_ar1():
    rng = np.random.default_rng(0)
    x = rng.normal(size=20000)
    assert 0.8 * 20000 < ess_mcmc(x) < 1.25 * 20000
    phi = 0.9
    y = np.empty(20000)
    y[0] = 0
    for t in range(1, 20000):
        y[t] = phi * y[t - 1] + rng.normal()
    expect = 20000 * (1 - phi) / (1 + phi)
    assert 0.7 * expect < ess_mcmc(y) < 1.3 * expect


def test_unique_plans_and_weighted_quantiles():
    assert unique_plans([[0, 0, 1], [1, 1, 0], [0, 1, 1]]) == 2
    assert weighted_quantiles([1, 2, 3], [0.2, 0.3, 0.5], [0.1, 0.5, 0.9]).tolist() == [1, 2, 3]


def test_gerrymandering_indices_match_scalar():
    rng = np.random.default_rng(4)
    ens = rng.uniform(size=(50, 3))
    w = rng.dirichlet(np.ones(50))
    plans = rng.uniform(size=(7, 3))
    got = gerrymandering_indices(plans, ens, w)
    assert np.allclose(got, [gerrymandering_index(p, ens, w) for p in plans])
