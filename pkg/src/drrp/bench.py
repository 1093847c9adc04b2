"""Benchmark harness: LP-gap study and instance x method suites written as CSV."""

from __future__ import annotations

import csv
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from .evaluation import EvaluationResult, evaluate_plan
from .model import no_action_plan, write_plan_csv
from .scenarios import GridGenParams, expected_scenario, generate_grid_instance, linear_loss_model
from .spar import METHODS, SparConfig, run
from .stage1 import solve_deterministic_drrp
from .stage2 import service_rate, solve_stage2
from .vfa import StepSizeRule, write_snapshots

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger(__name__)

__all__ = ["EvaluationResult", "GapRow", "SuiteConfig", "evaluate_plan", "lp_gap_study", "run_suite",
           "summarize_gaps", "load_suite_config", "write_rows"]


# ------------------------------------------------------------ LP gap


@dataclass(frozen=True)
class GapRow:
    nodes: int
    fleet: int
    instance: int
    gap: float  # (MIP - LP) / MIP, fraction
    mip_objective: float
    lp_objective: float
    mip_seconds: float
    lp_seconds: float
    expected_demand: float  # total over the horizon
    na_rate: float
    opt_rate: float
    timed_out: bool


def relative_gap(mip: float, lp: float) -> float:
    if abs(mip) < 1e-12:
        return 0.0 if abs(mip - lp) < 1e-9 else float("inf")
    return (mip - lp) / abs(mip)


def lp_gap_row(params: GridGenParams, time_limit: float = 600.0, rel_gap: float = 1e-3,
               backend: str = "native") -> GapRow:
    inst, model = generate_grid_instance(params)
    lin = linear_loss_model(model)
    xi = expected_scenario(lin)
    relaxed = solve_deterministic_drrp(inst, xi, relax=True, backend=backend)
    mip = solve_deterministic_drrp(inst, xi, rel_gap=rel_gap, time_limit=time_limit, backend=backend)
    na = service_rate(xi, solve_stage2(inst, xi, no_action_plan(inst)))
    opt = service_rate(xi, solve_stage2(inst, xi, mip.plan)) if np.isfinite(mip.objective) else float("nan")
    return GapRow(params.n_stations, params.n_rv, params.rng_seed, relative_gap(mip.objective, relaxed.objective),
                  mip.objective, relaxed.objective, mip.seconds, relaxed.seconds, float(sum(model.rates.values())),
                  na, opt, mip.timed_out)


def lp_gap_study(sizes=(4,), fleets=(1,), n_instances: int = 10, seed: int = 0, time_limit: float = 600.0,
                 rel_gap: float = 1e-3, backend: str = "native", base: GridGenParams | None = None) -> list:
    """Rows for every (size, fleet, instance).  ``sizes`` are station counts (square grids)."""
    base = base or GridGenParams()
    rows = []
    for size in sizes:
        side = int(round(size ** 0.5))
        if side * side != size:
            raise ValueError(f"grid sizes must be square numbers, got {size}")
        for fleet in fleets:
            for k in range(n_instances):
                params = _replace(base, grid_side=side, n_rv=fleet, rng_seed=seed + k)
                row = lp_gap_row(params, time_limit, rel_gap, backend)
                if row.timed_out:
                    log.warning("MIP hit the time limit on %s nodes, fleet %s, instance %s", size, fleet, k)
                rows.append(row)
    return rows


def summarize_gaps(rows) -> list:
    """Mean per (nodes, fleet); gaps in percent."""
    groups: dict = {}
    for r in rows:
        groups.setdefault((r.nodes, r.fleet), []).append(r)
    out = []
    for (n, v), rs in sorted(groups.items()):
        g = np.array([r.gap for r in rs]) * 100
        out.append({"nodes": n, "fleet": v, "instances": len(rs), "gap_mean_pct": float(g.mean()),
                    "gap_sd_pct": float(g.std(ddof=1)) if len(rs) > 1 else 0.0,
                    "mip_seconds": float(np.mean([r.mip_seconds for r in rs])),
                    "lp_seconds": float(np.mean([r.lp_seconds for r in rs])),
                    "expected_demand_total": float(np.mean([r.expected_demand for r in rs])),
                    "na_rate": float(np.mean([r.na_rate for r in rs])),
                    "opt_rate": float(np.mean([r.opt_rate for r in rs])),
                    "timed_out": sum(r.timed_out for r in rs)})
    return out


# ------------------------------------------------------------ suites


@dataclass(frozen=True)
class SuiteConfig:
    grid_sides: tuple = (3,)
    fleets: tuple = (1,)
    instances: int = 10
    instance_seed: int = 0
    grid: dict = field(default_factory=dict)  # extra GridGenParams fields
    methods: tuple = ("NA", "M2I")
    iterations: int | None = None
    step_rule: str = "harmonic_20_40"
    gradient: str = "marginal"
    update: str = "smoothing"
    spar_seed: int = 0
    n_eval: int = 100
    eval_seed: int = 1000
    stage1_time_limit: float = 300.0
    final_time_limit: float = 1200.0
    wall_time: float = float("inf")
    checkpoints: tuple = ()
    out_dir: str = "results"
    workers: int = 1
    plots: bool = False


def load_suite_config(path) -> SuiteConfig:
    """TOML with sections ``[grid]``, ``[methods]``, ``[eval]``, ``[limits]`` and ``[output]``."""
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    known = {"grid", "methods", "eval", "limits", "output"}
    unknown = set(doc) - known
    if unknown:
        raise ValueError(f"unknown config sections {sorted(unknown)}")
    grid = dict(doc.get("grid", {}))
    meth = doc.get("methods", {})
    ev = doc.get("eval", {})
    lim = doc.get("limits", {})
    out = doc.get("output", {})
    extra_grid = {k: v for k, v in grid.items() if k not in ("sides", "fleets", "instances", "seed")}
    gen_fields = {f.name for f in fields(GridGenParams)}
    bad = set(extra_grid) - gen_fields
    if bad:
        raise ValueError(f"unknown [grid] keys {sorted(bad)}")
    methods = tuple(meth.get("list", ("NA", "M2I")))
    if any(m not in METHODS for m in methods):
        raise ValueError(f"methods must be among {METHODS}")
    cfg = SuiteConfig(
        grid_sides=tuple(grid.get("sides", (3,))), fleets=tuple(grid.get("fleets", (1,))),
        instances=int(grid.get("instances", 10)), instance_seed=int(grid.get("seed", 0)), grid=extra_grid,
        methods=methods, iterations=meth.get("iterations"), step_rule=meth.get("step_rule", "harmonic_20_40"),
        gradient=meth.get("gradient", "marginal"), update=meth.get("update", "smoothing"),
        spar_seed=int(meth.get("seed", 0)), n_eval=int(ev.get("scenarios", 100)), eval_seed=int(ev.get("seed", 1000)),
        checkpoints=tuple(ev.get("checkpoints", ())),
        stage1_time_limit=float(lim.get("stage1_time_limit", 300.0)),
        final_time_limit=float(lim.get("final_time_limit", 1200.0)), wall_time=float(lim.get("wall_time", "inf")),
        out_dir=str(out.get("dir", "results")), workers=int(out.get("workers", 1)), plots=bool(out.get("plots", False)))
    StepSizeRule.parse(cfg.step_rule)
    return cfg


def _replace(params: GridGenParams, **kw) -> GridGenParams:
    d = asdict(params)
    d.update(kw)
    return GridGenParams(**d)


def suite_cells(cfg: SuiteConfig) -> list:
    cells = []
    for side in cfg.grid_sides:
        for fleet in cfg.fleets:
            for k in range(cfg.instances):
                params = GridGenParams(**{**cfg.grid, "grid_side": side, "n_rv": fleet,
                                          "rng_seed": cfg.instance_seed + k})
                for method in cfg.methods:
                    cells.append((params, method))
    return cells


def _spar_config(cfg: SuiteConfig, method: str, instance_index: int) -> SparConfig:
    return SparConfig(method=method, n_max=cfg.iterations, step_rule=StepSizeRule.parse(cfg.step_rule),
                      seed=cfg.spar_seed + instance_index, stage1_time_limit=cfg.stage1_time_limit,
                      final_time_limit=cfg.final_time_limit, update=cfg.update, gradient=cfg.gradient,
                      wall_time=cfg.wall_time, checkpoints=cfg.checkpoints, checkpoint_eval=cfg.n_eval,
                      eval_seed=cfg.eval_seed + instance_index)


def run_cell(cfg: SuiteConfig, params: GridGenParams, method: str, cell_dir: Path) -> dict:
    """One (instance, method) run plus its Monte-Carlo evaluation; files go to ``cell_dir``."""
    inst, model = generate_grid_instance(params)
    k = params.rng_seed - cfg.instance_seed
    report = run(inst, model, _spar_config(cfg, method, k))
    ev = evaluate_plan(inst, model, report.plan, cfg.n_eval, cfg.eval_seed + k)
    cell_dir.mkdir(parents=True, exist_ok=True)
    write_plan_csv(cell_dir / "plan", report.plan)
    np.save(cell_dir / "costs.npy", ev.costs)
    np.save(cell_dir / "rates.npy", ev.rates)
    if report.history:
        write_rows(cell_dir / "iterations.csv", [asdict(r) for r in report.history])
    if report.snapshots:
        write_snapshots(cell_dir / "theta.csv", report.snapshots)
    stage1_times = [r.stage1_seconds for r in report.history]
    row = {"nodes": params.n_stations, "fleet": params.n_rv, "instance": k, "method": method,
           "rate_mean": ev.rate_mean, "rate_sd": ev.rate_sd, "cost_mean": ev.cost_mean, "cost_sd": ev.cost_sd,
           "objective_mean": ev.objective_mean, "objective_sd": ev.objective_sd, "plan_cost": ev.plan_cost,
           "seconds": report.seconds, "final_seconds": report.final_seconds,
           "stage1_seconds_mean": float(np.mean(stage1_times)) if stage1_times else 0.0,
           "iterations": len(report.history), "timed_out": report.timed_out}
    for n, cp in sorted(report.checkpoints.items()):
        row[f"iterate_rate_at_{n}"] = cp.rate_mean
    return row


def _run_cell_safe(args):
    cfg, params, method, cell_dir = args
    try:
        return run_cell(cfg, params, method, cell_dir), None
    except Exception as exc:  # one failing cell must not stop the suite
        log.exception("cell %s/%s failed", params, method)
        return None, f"{params.n_stations}/{params.n_rv}/{params.rng_seed}/{method}: {exc!r}"


def run_suite(cfg: SuiteConfig | str | os.PathLike) -> dict:
    """Run every cell, then write the tables.  Returns ``{"rows", "failures", "out_dir"}``."""
    if not isinstance(cfg, SuiteConfig):
        cfg = load_suite_config(cfg)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cells = suite_cells(cfg)
    jobs = [(cfg, p, m, out / "cells" / f"n{p.n_stations}_v{p.n_rv}_i{p.rng_seed - cfg.instance_seed}_{m}")
            for p, m in cells]
    if cfg.workers > 1:
        with ProcessPoolExecutor(cfg.workers) as pool:
            results = list(pool.map(_run_cell_safe, jobs))
    else:
        results = [_run_cell_safe(j) for j in jobs]
    rows = [r for r, _ in results if r is not None]
    failures = [e for _, e in results if e is not None]
    write_rows(out / "runs.csv", rows)
    write_rows(out / "service_rates.csv", improvement_table(rows, "rate_mean", scale=100.0))
    write_rows(out / "costs.csv", improvement_table(rows, "objective_mean", scale=1.0, lower_is_better=True))
    write_rows(out / "timings.csv", timing_table(rows))
    manifest = {"config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(cfg).items()},
                "cells": len(cells), "failures": failures}
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
    if cfg.plots:
        from .plots import render_suite

        render_suite(out)
    return {"rows": rows, "failures": failures, "out_dir": str(out)}


def improvement_table(rows, metric: str, scale: float = 1.0, lower_is_better: bool = False) -> list:
    """Paired deltas against NA on the same instance, mean and sd over instances."""
    base = {(r["nodes"], r["fleet"], r["instance"]): r[metric] for r in rows if r["method"] == "NA"}
    groups: dict = {}
    for r in rows:
        key = (r["nodes"], r["fleet"], r["instance"])
        if r["method"] == "NA" or key not in base:
            continue
        d = (r[metric] - base[key]) * scale
        if lower_is_better:
            d = -d
        groups.setdefault((r["nodes"], r["fleet"], r["method"]), []).append(d)
    out = []
    for (n, v, m), ds in sorted(groups.items()):
        a = np.array(ds)
        out.append({"nodes": n, "fleet": v, "method": m, "instances": len(ds), "delta_mean": float(a.mean()),
                    "delta_sd": float(a.std(ddof=1)) if len(ds) > 1 else 0.0, "positive": int((a > 0).sum())})
    return out


def timing_table(rows) -> list:
    groups: dict = {}
    for r in rows:
        groups.setdefault((r["nodes"], r["fleet"], r["method"]), []).append(r)
    return [{"nodes": n, "fleet": v, "method": m, "instances": len(rs),
             "seconds_mean": float(np.mean([r["seconds"] for r in rs])),
             "final_seconds_mean": float(np.mean([r["final_seconds"] for r in rs])),
             "stage1_seconds_mean": float(np.mean([r["stage1_seconds_mean"] for r in rs])),
             "timed_out": sum(bool(r["timed_out"]) for r in rs)}
            for (n, v, m), rs in sorted(groups.items())]


def write_rows(path, rows) -> None:
    rows = list(rows)
    header = []
    for r in rows:
        for k in r:
            if k not in header:
                header.append(k)
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=header)
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
