"""Stochastic approximation loop that learns the separable cost-to-go.

Methods:

``NA``    no action.
``M1``    one deterministic solve against expected demand, no learning.
``M2R``   iterate with fully relaxed first-stage problems, integer solve at the end.
``M2HI``  routing integral for the first half of the horizon, integer solve at the end.
``M2I``   fully integral iterates; the last one is returned.
``M3``    random actions while learning, integer solve at the end.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .evaluation import evaluate_plan, evaluation_scenarios
from .model import NetworkInstance, RebalancePlan
from .scenarios import DemandModel, expected_scenario, sample_scenario, stream
from .stage1 import Stage1Solver, plan_objective, random_plan, solve_deterministic_drrp
from .stage2 import marginal_values, service_rate, solve_stage2
from .vfa import (StepSizeRule, ValueFunctionApprox, default_theta_max, gradient_vector, smoothing_direction,
                  step)

log = logging.getLogger(__name__)

METHODS = ("NA", "M1", "M2R", "M2HI", "M2I", "M3")
ITERATE_MODE = {"M2R": "relaxed", "M2HI": "half_integer", "M2I": "integer"}
UPDATES = ("smoothing", "literal")
GRADIENTS = ("local", "cumulative", "marginal")


@dataclass(frozen=True)
class SparConfig:
    method: str = "M2I"
    n_max: int | None = None  # 50, or 200 for M3
    step_rule: StepSizeRule = StepSizeRule()
    seed: int = 0
    rel_gap: float = 5e-3
    stage1_time_limit: float = 300.0
    final_time_limit: float = 1200.0
    update: str = "smoothing"
    gradient: str = "marginal"
    theta_max: float | None = None
    wall_time: float = float("inf")
    snapshot_every: int = 0  # 0 keeps only the final slopes
    checkpoints: tuple = ()  # iterations whose iterate plan is Monte-Carlo evaluated
    checkpoint_eval: int = 100
    eval_seed: int = 0
    backend: str = "native"

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"unknown method {self.method!r}")
        if self.n_max is not None and self.n_max < 1:
            raise ValueError("n_max must be at least 1")
        if self.update not in UPDATES or self.gradient not in GRADIENTS:
            raise ValueError("unknown update or gradient option")

    @property
    def iterations(self) -> int:
        if self.n_max is not None:
            return self.n_max
        return 200 if self.method == "M3" else 50


@dataclass(frozen=True)
class IterationRecord:
    n: int
    alpha: float
    stage1_objective: float
    stage2_cost: float
    service_rate: float
    stage1_seconds: float
    stage2_seconds: float
    mip_gap: float = 0.0
    nodes: int = 0
    timed_out: bool = False


@dataclass
class SparRunReport:
    method: str
    plan: RebalancePlan
    vfa: ValueFunctionApprox | None
    history: list = field(default_factory=list)
    snapshots: list = field(default_factory=list)  # (iteration, vfa)
    checkpoints: dict = field(default_factory=dict)  # iteration -> EvaluationResult of the iterate plan
    final_objective: float = float("nan")
    final_gap: float = 0.0
    final_seconds: float = 0.0
    final_timed_out: bool = False
    stopped_early: bool = False
    seconds: float = 0.0

    @property
    def timed_out(self) -> bool:
        return self.final_timed_out or any(r.timed_out for r in self.history)


def never_stop(report: SparRunReport) -> bool:
    return False


def wall_time_stop(limit: float, started: float) -> Callable[[SparRunReport], bool]:
    return lambda report: time.perf_counter() - started >= limit


def early_stop_hook(report: SparRunReport, config: SparConfig, started: float) -> bool:
    """Default predicate: stop only when the wall-time budget is spent."""
    return time.perf_counter() - started >= config.wall_time


def cumulative_duals(duals: dict, T: int) -> dict:
    """Suffix sums over time of the fill-bound multipliers at each station.

    An SV added at step ``t`` stays in every later inventory constraint, so
    the sum over ``tau >= t`` is the full marginal effect.
    """
    out = {}
    stations = sorted({i for (i, _) in duals})
    for i in stations:
        up = lo = 0.0
        for t in range(T, 0, -1):
            lp, lm = duals.get((i, t), (0.0, 0.0))
            up += lp
            lo += lm
            out[(i, t)] = (up, lo)
    return out


def _initial_vfa(instance: NetworkInstance, model: DemandModel, config: SparConfig) -> ValueFunctionApprox:
    keys = [(i, t) for t in range(1, instance.T + 1) for i in instance.action_nodes]
    tmax = config.theta_max if config.theta_max is not None else default_theta_max(model.value_high)
    return ValueFunctionApprox.zeros(keys, instance.max_load, tmax)


def spar_update(vfa: ValueFunctionApprox, plan: RebalancePlan, duals: dict, alpha: float, T: int,
                update: str = "smoothing", gradient: str = "local") -> ValueFunctionApprox:
    """One projected step from second-stage duals."""
    if gradient == "cumulative":
        duals = cumulative_duals(duals, T)
    net = {key: plan.net(*key) for key in vfa.keys}
    zeta = gradient_vector(net, {k: v for k, v in duals.items() if k in vfa._pos}, vfa.ybar)
    direction = smoothing_direction(vfa, zeta, net) if update == "smoothing" else zeta
    new = step(vfa, direction, alpha)
    if not new.is_admissible():
        raise AssertionError("slope update left the admissible set")
    return new


def run(instance: NetworkInstance, model: DemandModel, config: SparConfig = SparConfig(),
        stop: Callable[[SparRunReport], bool] | None = None) -> SparRunReport:
    started = time.perf_counter()
    method = config.method
    if method == "NA":
        return SparRunReport(method, RebalancePlan(), None, final_objective=0.0,
                             seconds=time.perf_counter() - started)
    if method == "M1":
        res = solve_deterministic_drrp(instance, expected_scenario(model), config.rel_gap, config.final_time_limit,
                                       backend=config.backend)
        return SparRunReport(method, res.plan, None, final_objective=res.objective,
                             final_gap=_gap(res.objective, res.bound), final_seconds=res.seconds,
                             final_timed_out=res.timed_out, seconds=time.perf_counter() - started)

    vfa = _initial_vfa(instance, model, config)
    report = SparRunReport(method, RebalancePlan(), vfa)
    solver = None
    if method in ITERATE_MODE:
        solver = Stage1Solver(instance, ITERATE_MODE[method], rel_gap=config.rel_gap,
                              time_limit=config.stage1_time_limit, backend=config.backend)
    eval_sample = None
    plan = RebalancePlan()
    for n in range(1, config.iterations + 1):
        t0 = time.perf_counter()
        gap, nodes, timed_out = 0.0, 0, False
        if solver is None:
            plan = random_plan(instance, stream(config.seed, "m3", n))
            obj1 = plan_objective(instance, vfa, plan)
        else:
            res = solver.solve(vfa)
            plan, obj1, gap, nodes, timed_out = res.plan, res.objective, res.gap, res.nodes, res.timed_out
        t1 = time.perf_counter()
        xi = sample_scenario(model, stream(config.seed, "scenario", n))
        sol, network, flow = solve_stage2(instance, xi, plan, return_network=True)
        duals = sol.duals
        if config.gradient == "marginal":
            duals = {key: (right, 0.0) for key, (right, _) in marginal_values(network, flow).items()}
        t2 = time.perf_counter()
        alpha = config.step_rule(n)
        if n in config.checkpoints:
            if eval_sample is None:
                eval_sample = evaluation_scenarios(instance, model, config.checkpoint_eval, config.eval_seed)
            report.checkpoints[n] = evaluate_plan(instance, model, plan, scenarios=eval_sample)
        vfa = spar_update(vfa, plan, duals, alpha, instance.T, config.update, config.gradient)
        report.history.append(IterationRecord(n, alpha, obj1, sol.cost, service_rate(xi, sol), t1 - t0, t2 - t1,
                                              gap, nodes, timed_out))
        report.vfa = vfa
        if config.snapshot_every and n % config.snapshot_every == 0:
            report.snapshots.append((n, vfa))
        if (stop or (lambda r: early_stop_hook(r, config, started)))(report):
            report.stopped_early = n < config.iterations
            break

    if method == "M2I":
        report.plan = plan
        report.final_objective = report.history[-1].stage1_objective
    else:
        t0 = time.perf_counter()
        final = Stage1Solver(instance, "integer", rel_gap=config.rel_gap, time_limit=config.final_time_limit,
                             backend=config.backend).solve(vfa)
        report.plan = final.plan
        report.final_objective = final.objective
        report.final_gap = final.gap
        report.final_timed_out = final.timed_out
        report.final_seconds = time.perf_counter() - t0
    if not report.snapshots or report.snapshots[-1][0] != len(report.history):
        report.snapshots.append((len(report.history), vfa))
    report.seconds = time.perf_counter() - started
    return report


def _gap(obj: float, bound: float) -> float:
    if not np.isfinite(obj) or not np.isfinite(bound):
        return float("nan")
    return abs(obj - bound) / max(abs(obj), 1e-9)

