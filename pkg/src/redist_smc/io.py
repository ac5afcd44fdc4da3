"""File formats: graph JSON, ensemble and reference NDJSON, stats CSV, configs, manifests.

Non-finite log weights are written as ``null`` so every file is strict JSON.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .graph import Graph, Plan, graph_from_json, graph_to_json


class ConfigError(ValueError):
    """Unknown or malformed configuration entry."""


def _dump(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _num(x: float):
    x = float(x)
    return x if math.isfinite(x) else None


def _unnum(x) -> float:
    return -math.inf if x is None else float(x)


# ---------------------------------------------------------------------------
# graphs

def load_graph(path) -> Graph:
    with open(path, encoding="utf-8") as fh:
        return graph_from_json(json.load(fh))


def save_graph(graph: Graph, path) -> None:
    Path(path).write_text(json.dumps(graph_to_json(graph), indent=1) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# ensembles

@dataclass
class EnsembleRecords:
    """Plans read from an ensemble file, in file order."""

    assignments: np.ndarray  # 0-based districts, graph node order
    log_weights: np.ndarray
    raw_log_weights: np.ndarray
    stage_log_weights: np.ndarray | None = None
    iterations: np.ndarray | None = None
    n: int = 0

    def __len__(self):
        return len(self.assignments)

    @property
    def plans(self) -> list[Plan]:
        return [Plan(a, self.n) for a in self.assignments]


def ensemble_records(graph: Graph, assignments, log_weights=None, raw_log_weights=None,
                     stage_log_weights=None, iterations=None, stage_info=None) -> Iterable[dict]:
    """One dict per plan; districts are written 1-based keyed by node id."""
    ids = graph.ids
    for j, a in enumerate(assignments):
        rec = {"id": j, "assignment": {nid: int(d) + 1 for nid, d in zip(ids, a)}}
        if iterations is not None:
            rec["weight"] = 1
            rec["log_weight"] = 0.0
            rec["iteration"] = int(iterations[j])
        else:
            rec["log_weight"] = _num(log_weights[j])
            rec["raw_log_weight"] = _num(raw_log_weights[j] if raw_log_weights is not None else log_weights[j])
        stages = {}
        if stage_log_weights is not None:
            stages["log_weights"] = [_num(x) for x in stage_log_weights[j]]
        if stage_info is not None:
            stages.update(stage_info)
        if stages:
            rec["stages"] = stages
        yield rec


def write_ndjson(path, records: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(_dump(rec) + "\n")


def read_ndjson(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if line.strip():
                try:
                    out.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{path}:{line_no}: {exc.msg}") from None
    return out


def write_ensemble(path, graph: Graph, ensemble) -> None:
    """Write a :class:`~redist_smc.smc.WeightedEnsemble` as NDJSON."""
    info = {"k": ensemble.diagnostics.get("k"), "acceptance_rates": ensemble.diagnostics.get("acceptance_rates")}
    write_ndjson(path, ensemble_records(graph, ensemble.assignments, ensemble.log_weights,
                                        ensemble.raw_log_weights, ensemble.log_stage_weights,
                                        stage_info=info))


def write_chain(path, graph: Graph, chain) -> None:
    """Write a :class:`~redist_smc.mcmc.ChainResult` as NDJSON."""
    write_ndjson(path, ensemble_records(graph, chain.assignments, iterations=chain.iterations))


def read_ensemble(path, graph: Graph) -> EnsembleRecords:
    recs = read_ndjson(path)
    if not recs:
        raise ValueError(f"{path}: ensemble is empty")
    m = graph.m
    A = np.empty((len(recs), m), dtype=np.int64)
    lw = np.empty(len(recs))
    raw = np.empty(len(recs))
    stage = []
    its = []
    for j, rec in enumerate(recs):
        amap = rec["assignment"]
        if len(amap) != m:
            raise ValueError(f"{path}: record {j} assigns {len(amap)} nodes, graph has {m}")
        for nid, d in amap.items():
            A[j, graph.node(nid)] = int(d) - 1
        lw[j] = _unnum(rec.get("log_weight", 0.0))
        raw[j] = _unnum(rec.get("raw_log_weight", rec.get("log_weight", 0.0)))
        st = (rec.get("stages") or {}).get("log_weights")
        if st is not None:
            stage.append([_unnum(x) for x in st])
        if "iteration" in rec:
            its.append(int(rec["iteration"]))
    return EnsembleRecords(
        A, lw, raw,
        np.asarray(stage) if len(stage) == len(recs) else None,
        np.asarray(its) if len(its) == len(recs) else None,
        int(A.max()) + 1,
    )


# ---------------------------------------------------------------------------
# reference sets

def write_reference(path, refset) -> None:
    meta = {"type": "meta", "n": refset.n, "D": str(refset.D), "count": len(refset),
            "levels": list(refset.level_names) if refset.level_names else None}
    recs = [meta]
    ids = refset.graph.ids
    for r, a in enumerate(refset.plans):
        rec = {"id": r, "assignment": {nid: int(d) + 1 for nid, d in zip(ids, a)},
               "dev": float(refset.dev[r]), "rem": float(refset.rem[r]),
               "log_tau": _num(refset.log_tau[r])}
        if refset.log_tau_eta is not None:
            rec["log_tau_eta"] = _num(refset.log_tau_eta[r])
            rec["spl"] = [int(x) for x in refset.spl[r]]
        recs.append(rec)
    write_ndjson(path, recs)


def read_reference(path, graph: Graph):
    from fractions import Fraction

    from .enumerate import ReferenceSet

    recs = read_ndjson(path)
    if not recs or recs[0].get("type") != "meta":
        raise ValueError(f"{path}: missing reference-set header")
    meta, rows = recs[0], recs[1:]
    P, m = len(rows), graph.m
    A = np.empty((P, m), dtype=np.int64)
    for r, rec in enumerate(rows):
        for nid, d in rec["assignment"].items():
            A[r, graph.node(nid)] = int(d) - 1
    col = lambda key: np.asarray([_unnum(rec.get(key)) for rec in rows], dtype=float)
    has_lab = meta.get("levels") is not None
    return ReferenceSet(
        graph, int(meta["n"]), Fraction(meta["D"]), A,
        col("dev"), col("rem"), col("log_tau"),
        col("log_tau_eta") if has_lab else None,
        np.asarray([rec["spl"] for rec in rows], dtype=np.int64).reshape(P, -1) if has_lab else None,
        tuple(meta["levels"]) if has_lab else None,
    )


# ---------------------------------------------------------------------------
# tables

def write_csv(path, rows: Sequence[Mapping], columns: Sequence[str] | None = None) -> None:
    columns = list(columns or (rows[0].keys() if rows else []))
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=columns, lineterminator="\n")
        w.writeheader()
        for row in rows:
            w.writerow({k: _fmt(row.get(k)) for k in columns})


def _fmt(x):
    if isinstance(x, float):
        return repr(x) if math.isfinite(x) else ("-inf" if x < 0 else "inf")
    return x


def read_csv(path) -> list[dict]:
    with open(path, encoding="utf-8", newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True, allow_nan=False) + "\n",
                          encoding="utf-8")


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return _num(obj)
    return obj


# ---------------------------------------------------------------------------
# configs and manifests

SMC_KEYS = {
    "seed", "S", "n", "D", "rho", "alpha", "k", "k_threshold", "k_trees", "truncation",
    "constraints", "admin_levels", "correct_ordering", "final_resample", "max_attempts", "threads",
}
MCMC_KEYS = {"seed", "n", "D", "rho", "k", "constraints", "admin_levels", "iterations", "burn_in",
             "thin", "threads", "initial"}


def load_config(path, allowed: set[str] = SMC_KEYS) -> dict:
    """Read a JSON config object and reject unknown keys."""
    with open(path, encoding="utf-8") as fh:
        try:
            cfg = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    unknown = sorted(set(cfg) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    return cfg


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    version: str
    inputs: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)
    stages: list = field(default_factory=list)
    k_schedule: list | None = None
    acceptance_rates: list | None = None
    seconds: float | None = None
    python: str = field(default_factory=platform.python_version)

    def to_dict(self) -> dict:
        return asdict(self)

    def write(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def read(cls, path) -> "RunManifest":
        with open(path, encoding="utf-8") as fh:
            return cls(**json.load(fh))
