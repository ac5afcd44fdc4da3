"""Plan statistics and sampler diagnostics."""
from __future__ import annotations

from fractions import Fraction
from typing import Iterable, Sequence

import numpy as np
from scipy.special import logsumexp

from .graph import Graph, Labeling, Plan, canonical_form, components
from .splitter import as_fraction


def _assignment(plan) -> np.ndarray:
    if isinstance(plan, Plan):
        return plan.assignment
    return np.asarray(plan, dtype=np.int64)


def _n_districts(a: np.ndarray, n: int | None) -> int:
    return int(a.max()) + 1 if n is None else n


def district_pops(plan, graph: Graph, n: int | None = None) -> np.ndarray:
    a = _assignment(plan)
    return np.bincount(a, weights=graph.pop, minlength=_n_districts(a, n)).astype(np.int64)


def dev_exact(plan, graph: Graph, n: int | None = None) -> Fraction:
    """Maximum relative population deviation as an exact fraction."""
    a = _assignment(plan)
    n = _n_districts(a, n)
    counts = np.bincount(a, minlength=n)
    if (counts == 0).any():
        raise ValueError("plan has an empty district")
    pops = district_pops(a, graph, n)
    total = graph.total_pop
    worst = max(abs(n * int(p) - total) for p in pops)
    return Fraction(worst, total)


def dev(plan, graph: Graph, n: int | None = None) -> float:
    """Maximum over districts of ``|pop(V_i) / (pop(V)/n) - 1|``."""
    return float(dev_exact(plan, graph, n))


def within_tolerance(plan, graph: Graph, D, n: int | None = None) -> bool:
    return dev_exact(plan, graph, n) <= as_fraction(D)


def rem(plan, graph: Graph) -> float:
    """Fraction of edges whose endpoints lie in different districts."""
    a = _assignment(plan)
    if graph.n_edges == 0:
        return 0.0
    e = np.asarray(graph.edges)
    return float(np.count_nonzero(a[e[:, 0]] != a[e[:, 1]]) / graph.n_edges)


def spl(plan, graph: Graph, labeling: Labeling, level: int = 0) -> int:
    """Administrative splits: unit-district pieces (by connected component) minus units."""
    a = _assignment(plan)
    codes = labeling.codes[level]
    pieces: dict[tuple[int, int], list[int]] = {}
    for v in range(graph.m):
        pieces.setdefault((int(codes[v]), int(a[v])), []).append(v)
    n_comp = sum(len(components(graph, nodes)) for nodes in pieces.values())
    return n_comp - labeling.n_units(level)


def spl_all(plan, graph: Graph, labeling: Labeling) -> list[int]:
    return [spl(plan, graph, labeling, lv) for lv in range(labeling.n_levels)]


def variation_of_information(plan_a, plan_b, graph: Graph) -> float:
    """Population-weighted variation of information, halved.

    Equals ``(H(A|B) + H(B|A)) / 2`` for the distribution of population over
    district pairs, so it lies in ``[0, log n]`` for ``n``-district plans: 0
    for relabellings, ``log n`` when every district of one plan is spread evenly
    over all districts of the other.
    """
    a = _assignment(plan_a)
    b = _assignment(plan_b)
    total = graph.total_pop
    if total <= 0:
        raise ValueError("variation of information needs positive total population")
    na, nb = int(a.max()) + 1, int(b.max()) + 1
    joint = np.zeros((na, nb))
    np.add.at(joint, (a, b), graph.pop)
    joint /= total
    pa = joint.sum(axis=1)
    pb = joint.sum(axis=0)
    nz = joint > 0
    i, j = np.nonzero(nz)
    p = joint[nz]
    val = -np.sum(p * (np.log(p / pb[j]) + np.log(p / pa[i])))
    return float(max(val, 0.0) / 2.0)


def pairwise_vi(plans: Sequence, graph: Graph) -> np.ndarray:
    """Condensed vector of VI distances over all pairs ``i < j``."""
    plans = [_assignment(p) for p in plans]
    out = []
    for i in range(len(plans)):
        for j in range(i + 1, len(plans)):
            out.append(variation_of_information(plans[i], plans[j], graph))
    return np.asarray(out)


def dissimilarity_index(plan, graph: Graph, group_attr: str, total_attr: str | None = None) -> float:
    """Two-group dissimilarity: ``1/2 sum_i |g_i/G - (t_i - g_i)/(T - G)|``.

    ``t_i`` is the district total from ``total_attr`` (node population if
    omitted) and ``g_i`` the group count from ``group_attr``.
    """
    a = _assignment(plan)
    n = int(a.max()) + 1
    g = np.bincount(a, weights=graph.attrs[group_attr], minlength=n)
    tot = graph.pop.astype(float) if total_attr is None else graph.attrs[total_attr]
    t = np.bincount(a, weights=tot, minlength=n)
    G, T = g.sum(), t.sum()
    if G <= 0 or T - G <= 0:
        raise ValueError("dissimilarity needs both groups to be present")
    return float(0.5 * np.abs(g / G - (t - g) / (T - G)).sum())


def district_shares(plan, graph: Graph, dem_attr: str, rep_attr: str) -> np.ndarray:
    """Democratic two-party share per district, sorted ascending (rank order)."""
    a = _assignment(plan)
    n = int(a.max()) + 1
    d = np.bincount(a, weights=graph.attrs[dem_attr], minlength=n)
    r = np.bincount(a, weights=graph.attrs[rep_attr], minlength=n)
    with np.errstate(invalid="ignore", divide="ignore"):
        share = np.where(d + r > 0, d / (d + r), 0.5)
    return np.sort(share)


def _rank_reference(ensemble_shares, weights, stat: str) -> np.ndarray:
    s = np.asarray(ensemble_shares, dtype=float)
    if s.ndim != 2:
        raise ValueError("ensemble shares must be a (plans, districts) array")
    s = np.sort(s, axis=1)
    w = np.ones(len(s)) if weights is None else np.asarray(weights, dtype=float)
    w = w / w.sum()
    if stat == "mean":
        return w @ s
    out = np.empty(s.shape[1])
    for k in range(s.shape[1]):
        order = np.argsort(s[:, k], kind="stable")
        cw = np.cumsum(w[order])
        out[k] = s[order[np.searchsorted(cw, 0.5)], k]
    return out


def gerrymandering_index(plan_shares, ensemble_shares, weights=None) -> float:
    """Sum over vote-share ranks of squared deviation from the ensemble rank mean."""
    ref = _rank_reference(ensemble_shares, weights, "mean")
    x = np.sort(np.asarray(plan_shares, dtype=float))
    return float(np.sum((x - ref) ** 2))


def gerrymandering_indices(plans_shares, ensemble_shares, weights=None) -> np.ndarray:
    """:func:`gerrymandering_index` for each row of ``plans_shares`` against one ensemble."""
    ref = _rank_reference(ensemble_shares, weights, "mean")
    x = np.sort(np.atleast_2d(np.asarray(plans_shares, dtype=float)), axis=1)
    return np.sum((x - ref) ** 2, axis=1)


def grouped_deviations(plan_shares, ensemble_shares, groups: Sequence[Sequence[int]],
                       weights=None) -> np.ndarray:
    """Per-group sums of deviations from the ensemble median share at each rank.

    ``groups`` lists 0-based rank indices (rank 0 = least Democratic).
    """
    ref = _rank_reference(ensemble_shares, weights, "median")
    x = np.sort(np.asarray(plan_shares, dtype=float))
    dev_ = x - ref
    return np.asarray([dev_[list(g)].sum() for g in groups])


def normalized_weights(log_weights) -> np.ndarray:
    lw = np.asarray(log_weights, dtype=float)
    return np.exp(lw - logsumexp(lw))


def ess_importance(log_weights) -> float:
    """Importance-sampling effective sample size ``(sum w)^2 / sum w^2``."""
    lw = np.asarray(log_weights, dtype=float)
    lw = lw[np.isfinite(lw)]
    if lw.size == 0:
        return 0.0
    return float(np.exp(2 * logsumexp(lw) - logsumexp(2 * lw)))


def ess_importance_h(log_weights, h) -> float:
    """Effective sample size for estimating the mean of ``h``.

    Uses weights ``w_i |h_i - mu|`` with ``mu`` the self-normalised estimate.
    Falls back to the generic ESS when ``h`` is constant.
    """
    lw = np.asarray(log_weights, dtype=float)
    h = np.asarray(h, dtype=float)
    keep = np.isfinite(lw)
    lw, h = lw[keep], h[keep]
    w = normalized_weights(lw)
    mu = np.sum(w * h)
    a = w * np.abs(h - mu)
    if a.sum() <= 0:
        return ess_importance(lw)
    return float(a.sum() ** 2 / np.sum(a ** 2))


def autocorrelation(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    n = x.size
    x = x - x.mean()
    f = np.fft.rfft(x, 2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    if acov[0] <= 0:
        return np.r_[1.0, np.zeros(n - 1)]
    return acov / acov[0]


def ess_mcmc(series) -> float:
    """Autocorrelation ESS ``N / (1 + 2 sum rho_k)`` with Geyer's initial monotone sequence."""
    x = np.asarray(series, dtype=float)
    n = x.size
    if n < 3:
        return float(n)
    rho = autocorrelation(x)
    if np.allclose(x, x[0]):
        return float(n)
    pairs = []
    for m in range(n // 2):
        g = rho[2 * m] + rho[2 * m + 1]
        if g <= 0:
            break
        pairs.append(g)
    if not pairs:
        return float(n)
    pairs = np.minimum.accumulate(np.asarray(pairs))
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(max(n, 10)))
    return float(min(n / tau, n * np.log10(n)))


def unique_plans(plans: Iterable) -> int:
    return len({canonical_form(_assignment(p)) for p in plans})


def weighted_quantiles(values, weights, qs) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    order = np.argsort(v, kind="stable")
    cw = np.cumsum(w[order])
    cw /= cw[-1]
    idx = np.searchsorted(cw, np.asarray(qs), side="left")
    return v[order][np.minimum(idx, len(v) - 1)]
