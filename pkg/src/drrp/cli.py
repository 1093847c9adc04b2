"""Command-line front end.

Exit codes: 0 success, 2 partial failure (some suite cells failed or a
solve timed out), 1 invalid input.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, replace
from pathlib import Path

from .bench import lp_gap_study, load_suite_config, run_suite, summarize_gaps, write_rows
from .evaluation import evaluate_plan
from .model import RebalancePlan, check_plan, load_instance, read_plan_csv, save_instance, write_plan_csv
from .scenarios import GridGenParams, generate_grid_instance, ingest_trip_history
from .spar import METHODS, SparConfig, run
from .vfa import StepSizeRule, write_snapshots

try:
    import tomllib
except ModuleNotFoundError:  # python < 3.11
    import tomli as tomllib

log = logging.getLogger("drrp")

OK, FAILED, PARTIAL = 0, 1, 2


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(FAILED, f"{self.prog}: error: {message}\n")


def _common(p, *names):
    if "config" in names:
        p.add_argument("--config", help="TOML file")
    if "seed" in names:
        p.add_argument("--seed", type=int, default=0)
    if "out" in names:
        p.add_argument("--out-dir", default="results")
    if "time" in names:
        p.add_argument("--time-limit", type=float, default=None, help="seconds per first-stage solve")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="drrp", description="Rebalancing planner: generate, learn, evaluate, benchmark.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write grid benchmark instances")
    _common(g, "config", "seed", "out")
    g.add_argument("--grid-side", type=int, default=None)
    g.add_argument("--fleet", type=int, default=None)
    g.add_argument("--count", type=int, default=1)

    r = sub.add_parser("run", help="learn and output a plan for one instance")
    _common(r, "config", "seed", "out", "time")
    r.add_argument("--instance", required=True)
    r.add_argument("--method", choices=METHODS, default="M2I")
    r.add_argument("--iters", type=int, default=None)
    r.add_argument("--step-rule", default="harmonic_20_40")
    r.add_argument("--gradient", default="marginal")
    r.add_argument("--wall-time", type=float, default=float("inf"))
    r.add_argument("--eval-scenarios", type=int, default=0, help="also evaluate the plan")

    e = sub.add_parser("evaluate", help="Monte-Carlo evaluate a plan")
    _common(e, "seed")
    e.add_argument("--instance", required=True)
    e.add_argument("--plan", default=None, help="plan CSV prefix; omitted means no action")
    e.add_argument("--eval-scenarios", type=int, default=100)

    lg = sub.add_parser("lp-gap", help="LP relaxation gap of the deterministic model")
    _common(lg, "config", "seed", "out", "time")
    lg.add_argument("--sizes", default="4", help="comma-separated station counts")
    lg.add_argument("--fleets", default="1")
    lg.add_argument("--instances", type=int, default=10)

    s = sub.add_parser("suite", help="instances x methods from a TOML config")
    _common(s, "config", "out", "time")
    s.add_argument("--method", action="append", choices=METHODS, help="override the method list")
    s.add_argument("--iters", type=int, default=None)
    s.add_argument("--eval-scenarios", type=int, default=None)
    s.add_argument("--seed", type=int, default=None)

    i = sub.add_parser("ingest", help="turn a trip log into an instance")
    _common(i, "config", "out")
    i.add_argument("--trips", required=True, help="CSV trip log")
    i.add_argument("--instance", required=True, help="network template instance (JSON)")
    i.add_argument("--window-start", default="00:00")
    i.add_argument("--days", type=int, default=None)
    return ap


def _toml(path) -> dict:
    if not path:
        return {}
    try:
        with open(path, "rb") as fh:
            return tomllib.load(fh)
    except (OSError, tomllib.TOMLDecodeError) as exc:
        raise InputError(f"cannot read config {path}: {exc}") from exc


def cmd_generate(a) -> int:
    grid = dict(_toml(a.config).get("grid", {}))
    sides = grid.pop("sides", [3])
    fleets = grid.pop("fleets", [1])
    count = grid.pop("instances", a.count)
    seed = grid.pop("seed", a.seed)
    if a.grid_side:
        sides = [a.grid_side]
    if a.fleet is not None:
        fleets = [a.fleet]
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for side in sides:
        for fleet in fleets:
            for k in range(count):
                try:
                    params = GridGenParams(**{**grid, "grid_side": side, "n_rv": fleet, "rng_seed": seed + k})
                except TypeError as exc:
                    raise InputError(str(exc)) from exc
                inst, model = generate_grid_instance(params)
                path = out / f"grid_n{side * side}_v{fleet}_s{seed + k}.json"
                save_instance(path, inst, model)
                print(path)
    return OK


def _load(path):
    try:
        inst, model = load_instance(path)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot load instance {path}: {exc}") from exc
    if model is None:
        raise InputError(f"{path} carries no demand model")
    return inst, model


def cmd_run(a) -> int:
    inst, model = _load(a.instance)
    cfg = SparConfig(method=a.method, n_max=a.iters, step_rule=StepSizeRule.parse(a.step_rule), seed=a.seed,
                     gradient=a.gradient, wall_time=a.wall_time,
                     **({"stage1_time_limit": a.time_limit} if a.time_limit else {}))
    report = run(inst, model, cfg)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_plan_csv(out / "plan", report.plan)
    if report.history:
        write_rows(out / "iterations.csv", [asdict(r) for r in report.history])
    if report.snapshots:
        write_snapshots(out / "theta.csv", report.snapshots)
    summary = {"method": a.method, "iterations": len(report.history), "objective": report.final_objective,
               "seconds": report.seconds, "timed_out": report.timed_out, "stopped_early": report.stopped_early}
    if a.eval_scenarios:
        ev = evaluate_plan(inst, model, report.plan, a.eval_scenarios, a.seed)
        summary.update(rate_mean=ev.rate_mean, rate_sd=ev.rate_sd, cost_mean=ev.cost_mean)
    with open(out / "manifest.json", "w") as fh:
        json.dump({"config": {k: str(v) for k, v in asdict(cfg).items()}, "instance": a.instance,
                   "summary": summary}, fh, indent=2)
    print(json.dumps(summary))
    return PARTIAL if report.timed_out else OK


def cmd_evaluate(a) -> int:
    inst, model = _load(a.instance)
    if a.plan:
        try:
            plan = read_plan_csv(a.plan)
        except (OSError, ValueError, KeyError) as exc:
            raise InputError(f"cannot read plan {a.plan}: {exc}") from exc
        problems = check_plan(inst, plan)
        if problems:
            raise InputError("infeasible plan: " + "; ".join(problems[:5]))
    else:
        plan = RebalancePlan()
    ev = evaluate_plan(inst, model, plan, a.eval_scenarios, a.seed)
    print(json.dumps({k: v for k, v in asdict(ev).items() if k not in ("costs", "rates")}))
    return OK


def _ints(text):
    try:
        return tuple(int(x) for x in text.split(",") if x)
    except ValueError as exc:
        raise InputError(f"expected comma-separated integers, got {text!r}") from exc


def cmd_lp_gap(a) -> int:
    rows = lp_gap_study(_ints(a.sizes), _ints(a.fleets), a.instances, a.seed,
                        time_limit=a.time_limit if a.time_limit else 600.0)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_rows(out / "lp_gap_instances.csv", [asdict(r) for r in rows])
    summary = summarize_gaps(rows)
    write_rows(out / "lp_gap.csv", summary)
    for row in summary:
        print(json.dumps(row))
    return PARTIAL if any(r.timed_out for r in rows) else OK


def cmd_suite(a) -> int:
    if not a.config:
        raise InputError("suite needs --config")
    try:
        cfg = load_suite_config(a.config)
    except (OSError, ValueError, tomllib.TOMLDecodeError) as exc:
        raise InputError(str(exc)) from exc
    changes = {}
    if a.method:
        changes["methods"] = tuple(a.method)
    if a.iters:
        changes["iterations"] = a.iters
    if a.eval_scenarios:
        changes["n_eval"] = a.eval_scenarios
    if a.seed is not None:
        changes["spar_seed"] = a.seed
    if a.time_limit:
        changes["stage1_time_limit"] = a.time_limit
    if a.out_dir != "results":
        changes["out_dir"] = a.out_dir
    res = run_suite(replace(cfg, **changes))
    print(json.dumps({"rows": len(res["rows"]), "failures": res["failures"], "out_dir": res["out_dir"]}))
    return PARTIAL if res["failures"] else OK


def cmd_ingest(a) -> int:
    try:
        inst, _ = load_instance(a.instance)
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"cannot load instance {a.instance}: {exc}") from exc
    opts = _toml(a.config).get("ingest", {})
    stations = opts.get("stations")
    if stations is None:
        # template station ids map to themselves
        stations = {str(i): i for i in inst.sv_nodes}
    model, report = ingest_trip_history(a.trips, stations, inst.T, inst.K, float(opts.get("step_minutes", 15.0)),
                                        window_start=a.window_start, n_days=a.days)
    out = Path(a.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_instance(out / "ingested.json", inst, model)
    print(json.dumps(asdict(report)))
    return PARTIAL if report.malformed or report.unknown_station else OK


COMMANDS = {"generate": cmd_generate, "run": cmd_run, "evaluate": cmd_evaluate, "lp-gap": cmd_lp_gap,
            "suite": cmd_suite, "ingest": cmd_ingest}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.verb](args)
    except InputError as exc:
        print(f"drrp: {exc}", file=sys.stderr)
        return FAILED


if __name__ == "__main__":
    sys.exit(main())
