"""Command-line interface: ``sample``, ``mcmc``, ``enumerate``, ``calibrate``, ``analyze``.

Exit codes: 0 success, 1 sampler or search failure, 2 bad input (missing
file, malformed graph or config), 3 calibration flagged with ``--strict``.
Errors are printed to stderr as one JSON object.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (calibrate_plans, calibrate_statistic, plan_statistics, summarize)
from .constraints import ConstraintSpec
from .enumerate import EnumerationCapError, enumerate_partitions, reweight_reference
from .graph import GraphError, Labeling
from .io import (MCMC_KEYS, SMC_KEYS, ConfigError, RunManifest, file_sha256, load_config,
                 load_graph, read_ensemble, read_reference, write_chain, write_csv, write_ensemble,
                 write_json, write_reference)
from .mcmc import MergeSplitParams, initial_plan, run_chain
from .metrics import district_shares, gerrymandering_index, gerrymandering_indices, grouped_deviations
from .rng import RngStream
from .smc import SMCError, SmcConfig, StageStarvedError, run_smc


class UsageError(ValueError):
    pass


def _parse_k(text):
    if text is None:
        return None
    if text == "auto":
        return "auto"
    try:
        vals = [int(x) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"--k expects 'auto' or a comma-separated list of integers, got {text!r}") from None
    if not vals:
        raise UsageError("--k list is empty")
    return vals[0] if len(vals) == 1 else vals


def _parse_trunc(text):
    if text is None:
        return None
    if text.strip().lower() == "none":
        return "none"
    try:
        return float(text)
    except ValueError:
        return text


def _outputs(out: str) -> dict:
    p = Path(out)
    stem = p.with_suffix("") if p.suffix == ".ndjson" else p
    return {"ensemble": str(p), "stats": f"{stem}.stats.csv", "summary": f"{stem}.summary.json",
            "manifest": f"{stem}.manifest.json"}


def _threads(value):
    return value if value is not None else (os.cpu_count() or 1)


def _merge(cfg: dict, args, mapping: dict) -> dict:
    out = dict(cfg)
    for attr, key in mapping.items():
        val = getattr(args, attr, None)
        if val is not None:
            out[key] = val
    return out


def _require(cfg, key, flag):
    if cfg.get(key) is None:
        raise UsageError(f"missing {key!r}: pass {flag} or set it in the config")
    return cfg[key]


def _stats_and_summary(graph, assignments, log_weights, levels, paths, extra=None):
    lab = Labeling(graph, levels) if levels else None
    rows = plan_statistics(graph, assignments, lab)
    write_csv(paths["stats"], rows)
    summary = summarize(rows, log_weights, assignments)
    if extra:
        summary.update(extra)
    write_json(paths["summary"], summary)
    return summary


# ---------------------------------------------------------------------------
# commands

def cmd_sample(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config, SMC_KEYS) if args.config else {}
    cfg = _merge(cfg, args, {"seed": "seed", "particles": "S", "districts": "n", "pop_tol": "D",
                             "rho": "rho", "alpha": "alpha", "k": "k", "trunc": "truncation",
                             "admin_level": "admin_levels", "threads": "threads"})
    graph = load_graph(args.graph)
    trunc = cfg.get("truncation")
    config = SmcConfig(
        n_particles=int(_require(cfg, "S", "--particles")),
        n_districts=int(_require(cfg, "n", "--districts")),
        pop_tol=cfg.get("D", 0.01), rho=float(cfg.get("rho", 1.0)), alpha=float(cfg.get("alpha", 0.5)),
        constraints=ConstraintSpec.from_config(cfg.get("constraints"), graph),
        k=cfg.get("k", "auto"), k_threshold=float(cfg.get("k_threshold", 0.95)),
        k_trees=cfg.get("k_trees"), truncation=None if trunc == "none" else trunc,
        admin_levels=cfg.get("admin_levels"), seed=cfg.get("seed"),
        n_jobs=_threads(cfg.get("threads")), correct_ordering=bool(cfg.get("correct_ordering", False)),
        final_resample=bool(cfg.get("final_resample", False)), max_attempts=cfg.get("max_attempts"),
    )
    ens = run_smc(config, graph)
    paths = _outputs(args.out)
    Path(paths["ensemble"]).parent.mkdir(parents=True, exist_ok=True)
    write_ensemble(paths["ensemble"], graph, ens)
    extra = {"acceptance_rates": ens.diagnostics["acceptance_rates"], "k": ens.diagnostics["k"]}
    if ens.resample_index is not None:
        extra["final_resample"] = ens.resample_index.tolist()
    _stats_and_summary(graph, ens.assignments, ens.log_weights, config.admin_levels, paths, extra)
    snapshot = config.to_dict()
    snapshot["seed"] = ens.diagnostics["seed"]
    RunManifest(
        command="sample", config=snapshot, seed=ens.diagnostics["seed"], version=__version__,
        inputs={"graph": {"path": str(args.graph), "sha256": file_sha256(args.graph)}},
        outputs={k: v for k, v in paths.items() if k != "manifest"},
        stages=ens.diagnostics["stages"], k_schedule=ens.diagnostics["k"],
        acceptance_rates=ens.diagnostics["acceptance_rates"], seconds=time.perf_counter() - t0,
    ).write(paths["manifest"])
    return 0


def cmd_mcmc(args) -> int:
    t0 = time.perf_counter()
    cfg = load_config(args.config, MCMC_KEYS) if args.config else {}
    cfg = _merge(cfg, args, {"seed": "seed", "districts": "n", "pop_tol": "D", "rho": "rho", "k": "k",
                             "admin_level": "admin_levels", "iterations": "iterations",
                             "burn_in": "burn_in", "thin": "thin"})
    graph = load_graph(args.graph)
    n = int(_require(cfg, "n", "--districts"))
    levels = cfg.get("admin_levels")
    k = cfg.get("k")
    if k == "auto":
        k = None
    if isinstance(k, list):
        raise UsageError("merge-split takes a single k")
    params = MergeSplitParams(n, cfg.get("D", 0.01), float(cfg.get("rho", 1.0)),
                              ConstraintSpec.from_config(cfg.get("constraints"), graph), k,
                              Labeling(graph, levels) if levels else None)
    seed = int(np.random.SeedSequence(cfg.get("seed")).entropy)
    if cfg.get("initial") is not None:
        from .graph import Plan
        init = Plan.from_mapping(graph, cfg["initial"]).assignment
    else:
        init = initial_plan(graph, params, seed)
    iterations = int(cfg.get("iterations", 1000))
    res = run_chain(graph, init, iterations, params, RngStream(seed, (6,)),
                    int(cfg.get("burn_in", 0)), int(cfg.get("thin", 1)))
    paths = _outputs(args.out)
    Path(paths["ensemble"]).parent.mkdir(parents=True, exist_ok=True)
    write_chain(paths["ensemble"], graph, res)
    if len(res):
        _stats_and_summary(graph, res.assignments, None, levels, paths,
                           {"acceptance_rate": res.acceptance_rate})
    snapshot = dict(cfg)
    snapshot["seed"] = seed
    RunManifest(
        command="mcmc", config=snapshot, seed=seed, version=__version__,
        inputs={"graph": {"path": str(args.graph), "sha256": file_sha256(args.graph)}},
        outputs={k_: v for k_, v in paths.items() if k_ != "manifest"},
        acceptance_rates=[res.acceptance_rate], seconds=time.perf_counter() - t0,
    ).write(paths["manifest"])
    return 0


def cmd_enumerate(args) -> int:
    graph = load_graph(args.graph)
    if args.districts is None:
        raise UsageError("enumerate needs --districts")
    D = args.pop_tol if args.pop_tol is not None else args.districts - 1
    ref = enumerate_partitions(graph, args.districts, D, int(args.cap), args.admin_level)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_reference(args.out, ref)
    print(json.dumps({"plans": len(ref), "out": args.out}))
    return 0


def _target(args, graph, ref):
    cons = ConstraintSpec()
    if args.config:
        cfg = load_config(args.config, SMC_KEYS | MCMC_KEYS)
        cons = ConstraintSpec.from_config(cfg.get("constraints"), graph)
        rho = float(cfg.get("rho", 1.0))
    else:
        rho = 1.0
    if args.rho is not None:
        rho = args.rho
    return reweight_reference(ref, rho, cons)


def cmd_calibrate(args) -> int:
    graph = load_graph(args.graph)
    ens = read_ensemble(args.ensemble, graph)
    ref = read_reference(args.reference, graph)
    target = _target(args, graph, ref)
    lw = ens.raw_log_weights if args.weights == "raw" else ens.log_weights
    if args.statistic == "plans":
        report = calibrate_plans(ref, target, ens.assignments, lw)
    else:
        lab = ref.labeling()
        rows_ref = plan_statistics(graph, ref.plans, lab)
        rows_s = plan_statistics(graph, ens.assignments, lab)
        if args.statistic not in rows_ref[0]:
            raise UsageError(f"unknown statistic {args.statistic!r}; choose from {sorted(rows_ref[0])}")
        report = calibrate_statistic([r[args.statistic] for r in rows_ref], target,
                                     [r[args.statistic] for r in rows_s], lw, args.bins)
        report["statistic"] = args.statistic
    if args.out:
        write_json(args.out, report)
    print(json.dumps({k: v for k, v in report.items() if k != "bins"}))
    return 3 if (args.strict and report["flagged"]) else 0


def _parse_groups(text, n):
    if not text:
        return None
    groups = []
    for part in text.split(";"):
        idx = []
        for tok in part.split(","):
            tok = tok.strip()
            if "-" in tok:
                a, b = tok.split("-")
                idx.extend(range(int(a) - 1, int(b)))
            elif tok:
                idx.append(int(tok) - 1)
        if any(i < 0 or i >= n for i in idx):
            raise UsageError(f"group {part!r} refers to ranks outside 1..{n}")
        groups.append(idx)
    return groups


def cmd_analyze(args) -> int:
    graph = load_graph(args.graph)
    ens = read_ensemble(args.ensemble, graph)
    lab = Labeling(graph, args.admin_level) if args.admin_level else None
    partisan = bool(args.dem and args.rep)
    if bool(args.dem) != bool(args.rep):
        raise UsageError("--dem and --rep must be given together")
    rows = plan_statistics(graph, ens.assignments, lab, args.dem, args.rep, args.group_attr)
    paths = _outputs(args.out)
    Path(paths["stats"]).parent.mkdir(parents=True, exist_ok=True)
    write_csv(paths["stats"], rows)
    summary = summarize(rows, ens.log_weights, ens.assignments)
    if args.compare:
        cmp = read_ensemble(args.compare, graph)
        crow = plan_statistics(graph, cmp.assignments, lab, args.dem, args.rep, args.group_attr)
        w = np.exp(ens.log_weights - np.max(ens.log_weights))
        w /= w.sum()
        table = []
        groups = _parse_groups(args.groups, ens.n)
        shares = (np.asarray([district_shares(a, graph, args.dem, args.rep) for a in ens.assignments])
                  if partisan else None)
        cols = {key: np.asarray([r[key] for r in rows], dtype=float) for key in rows[0] if key != "id"}
        gi = gerrymandering_indices(shares, shares, w) if partisan else None
        for j, row in enumerate(crow):
            entry = {"id": j}
            for key, val in row.items():
                if key == "id":
                    continue
                entry[key] = val
                if key in cols:
                    entry[f"{key}_pct"] = float(np.sum(w * (cols[key] <= val)))
            if partisan:
                s = district_shares(cmp.assignments[j], graph, args.dem, args.rep)
                entry["gerrymandering_index"] = gerrymandering_index(s, shares, w)
                entry["gerrymandering_index_pct"] = float(np.sum(w * (gi <= entry["gerrymandering_index"])))
                if groups:
                    entry["grouped_deviations"] = grouped_deviations(s, shares, groups, w).tolist()
            table.append(entry)
        summary["comparisons"] = table
    write_json(paths["summary"], summary)
    print(json.dumps({"plans": len(rows), "stats": paths["stats"], "summary": paths["summary"]}))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="redist-smc", description="Sample, validate and analyse redistricting plans.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, sampler=True):
        sp.add_argument("--graph", required=True, help="graph JSON file")
        sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--out", required=True, help="ensemble NDJSON path; sibling files share its stem")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--districts", type=int)
        sp.add_argument("--pop-tol", type=float)
        sp.add_argument("--rho", type=float)
        sp.add_argument("--k", type=_parse_k, help="'auto' or comma-separated integers")
        sp.add_argument("--admin-level", action="append", help="unit level name, coarsest first; repeatable")
        sp.add_argument("--threads", type=int)

    s = sub.add_parser("sample", help="run the SMC sampler")
    common(s)
    s.add_argument("--particles", type=int)
    s.add_argument("--alpha", type=float)
    s.add_argument("--trunc", type=_parse_trunc, help="'none', a cap, or a rule like 'S^0.4/100'")
    s.set_defaults(func=cmd_sample)

    m = sub.add_parser("mcmc", help="run the merge-split chain")
    common(m)
    m.add_argument("--iterations", type=int)
    m.add_argument("--burn-in", type=int)
    m.add_argument("--thin", type=int)
    m.set_defaults(func=cmd_mcmc)

    e = sub.add_parser("enumerate", help="enumerate all balanced connected plans")
    e.add_argument("--graph", required=True)
    e.add_argument("--districts", type=int)
    e.add_argument("--pop-tol", type=float, help="defaults to n-1 (all connected partitions)")
    e.add_argument("--admin-level", action="append")
    e.add_argument("--cap", type=float, default=1e8, help="search-step budget")
    e.add_argument("--out", required=True)
    e.set_defaults(func=cmd_enumerate)

    c = sub.add_parser("calibrate", help="compare a weighted ensemble with the enumerated target")
    c.add_argument("--graph", required=True)
    c.add_argument("--ensemble", required=True)
    c.add_argument("--reference", required=True)
    c.add_argument("--config", help="config supplying rho and constraints")
    c.add_argument("--rho", type=float)
    c.add_argument("--statistic", default="plans", help="'plans' (TV over plans) or a statistic column")
    c.add_argument("--bins", type=int, default=20)
    c.add_argument("--weights", choices=["final", "raw"], default="final")
    c.add_argument("--strict", action="store_true", help="exit 3 when the TV exceeds the noise band")
    c.add_argument("--out")
    c.set_defaults(func=cmd_calibrate)

    a = sub.add_parser("analyze", help="statistics tables for an ensemble and comparison plans")
    a.add_argument("--graph", required=True)
    a.add_argument("--ensemble", required=True)
    a.add_argument("--compare", help="NDJSON plans to place within the ensemble")
    a.add_argument("--admin-level", action="append")
    a.add_argument("--dem")
    a.add_argument("--rep")
    a.add_argument("--group-attr")
    a.add_argument("--groups", help="vote-share rank groups, e.g. '1-5;6-10'")
    a.add_argument("--out", required=True, help="output stem")
    a.set_defaults(func=cmd_analyze)
    return p


def _fail(exc: BaseException, code: int) -> int:
    err = {"error": type(exc).__name__, "message": str(exc), "exit_code": code}
    if isinstance(exc, StageStarvedError):
        err["details"] = exc.diagnostics
    print(json.dumps(err), file=sys.stderr)
    return code


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, IsADirectoryError, PermissionError) as exc:
        return _fail(exc, 2)
    except (SMCError, EnumerationCapError) as exc:
        return _fail(exc, 1)
    except (ConfigError, GraphError, UsageError, ValueError, KeyError, TypeError) as exc:
        return _fail(exc, 2)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
