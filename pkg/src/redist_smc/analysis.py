"""Ensemble summaries and calibration against an enumerated target."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from . import metrics
from .graph import Graph, Labeling, log_tau_eta_nodes

QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)


def plan_statistics(graph: Graph, assignments, labeling: Labeling | None = None,
                    dem: str | None = None, rep: str | None = None,
                    group: str | None = None) -> list[dict]:
    """One row of statistics per plan."""
    rows = []
    for j, a in enumerate(np.asarray(assignments)):
        n = int(a.max()) + 1
        row = {"id": j, "dev": metrics.dev(a, graph, n), "rem": metrics.rem(a, graph),
               "log_tau": sum(log_tau_eta_nodes(graph, np.flatnonzero(a == i).tolist(), None)
                              for i in range(n))}
        if labeling is not None:
            for lv, name in enumerate(labeling.names):
                row[f"spl_{name}"] = metrics.spl(a, graph, labeling, lv)
        if dem and rep:
            shares = metrics.district_shares(a, graph, dem, rep)
            row["dem_seats"] = int(np.sum(shares > 0.5))
            for k, s in enumerate(shares):
                row[f"share_rank{k + 1}"] = float(s)
        if group:
            row["dissimilarity"] = metrics.dissimilarity_index(a, graph, group)
        rows.append(row)
    return rows


def summarize(rows: Sequence[dict], log_weights=None, assignments=None) -> dict:
    """Weighted quantiles of each numeric column plus ESS and unique-plan counts."""
    N = len(rows)
    if N == 0:
        raise ValueError("cannot summarise an empty ensemble")
    lw = np.zeros(N) if log_weights is None else np.asarray(log_weights, dtype=float)
    w = metrics.normalized_weights(lw)
    out: dict = {"plans": N, "ess": metrics.ess_importance(lw), "ess_kind": "importance (sum w)^2 / sum w^2"}
    if assignments is not None:
        out["unique_plans"] = metrics.unique_plans(assignments)
    stats = {}
    for key in rows[0]:
        if key == "id":
            continue
        vals = np.asarray([r[key] for r in rows], dtype=float)
        q = metrics.weighted_quantiles(vals, w, QUANTILES)
        stats[key] = {"mean": float(np.sum(w * vals)),
                      "quantiles": {str(p): float(x) for p, x in zip(QUANTILES, q)},
                      "ess_h": metrics.ess_importance_h(lw, vals)}
    out["statistics"] = stats
    return out


def weighted_plan_frequencies(refset, assignments, log_weights) -> tuple[np.ndarray, int]:
    """Weighted sample mass on each reference plan and the count of plans outside it."""
    w = metrics.normalized_weights(log_weights)
    freq = np.zeros(len(refset))
    outside = 0
    for a, wi in zip(assignments, w):
        r = refset.index_of(a)
        if r < 0:
            outside += 1
        else:
            freq[r] += wi
    return freq, outside


def tv_distance(p, q) -> float:
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())


def tv_noise_band(target, ess: float) -> tuple[float, float]:
    """Expected TV and a 3-sigma upper band under pure sampling noise at ``ess``.

    Each cell's frequency error is treated as normal with variance
    ``p (1 - p) / ess``, so ``TV`` is half a sum of half-normal variables.
    """
    p = np.asarray(target, dtype=float)
    sd = np.sqrt(p * (1 - p) / max(ess, 1.0))
    mean = 0.5 * math.sqrt(2 / math.pi) * sd.sum()
    var = 0.25 * (1 - 2 / math.pi) * np.sum(sd ** 2)
    return float(mean), float(mean + 3 * math.sqrt(var))


def calibrate_plans(refset, target, assignments, log_weights) -> dict:
    """TV distance between the weighted sample and the target over canonical plans."""
    lw = np.asarray(log_weights, dtype=float)
    if len(lw) == 0:
        raise ValueError("ensemble is empty")
    freq, outside = weighted_plan_frequencies(refset, assignments, lw)
    ess = metrics.ess_importance(lw)
    tv = tv_distance(freq, target)
    expected, band = tv_noise_band(target, ess)
    return {"mode": "plans", "tv": tv, "ess": ess, "expected_tv": expected, "band": band,
            "flagged": bool(tv > band), "support": int(np.count_nonzero(target)),
            "outside_reference": outside}


def calibrate_statistic(values_ref, target, values_sample, log_weights, bins: int = 20) -> dict:
    """Binned comparison of a statistic's weighted sample and target distributions.

    Every bin reports the target mass with a ``+- 2 sd`` band for a sample of
    the ensemble's effective size.
    """
    lw = np.asarray(log_weights, dtype=float)
    if len(lw) == 0:
        raise ValueError("ensemble is empty")
    w = metrics.normalized_weights(lw)
    ess = metrics.ess_importance(lw)
    lo = min(np.min(values_ref), np.min(values_sample))
    hi = max(np.max(values_ref), np.max(values_sample))
    edges = np.linspace(lo, hi if hi > lo else lo + 1, bins + 1)
    pt, _ = np.histogram(values_ref, edges, weights=target)
    ps, _ = np.histogram(values_sample, edges, weights=w)
    sd = np.sqrt(pt * (1 - pt) / ess)
    table = [{"lo": float(edges[b]), "hi": float(edges[b + 1]), "target": float(pt[b]),
              "sample": float(ps[b]), "band_lo": float(max(0.0, pt[b] - 2 * sd[b])),
              "band_hi": float(min(1.0, pt[b] + 2 * sd[b])),
              "inside": bool(abs(ps[b] - pt[b]) <= 2 * sd[b])} for b in range(bins)]
    tv = tv_distance(pt, ps)
    expected, band = tv_noise_band(pt, ess)
    return {"mode": "binned", "tv": tv, "ess": ess, "expected_tv": expected, "band": band,
            "flagged": bool(tv > band), "bins": table}
