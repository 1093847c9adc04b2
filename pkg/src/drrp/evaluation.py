"""Monte-Carlo evaluation of a first-stage plan."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import NetworkInstance, RebalancePlan
from .scenarios import DemandModel, sample_scenario, stream
from .stage2 import service_rate, solve_stage2


def plan_cost(instance: NetworkInstance, plan: RebalancePlan) -> float:
    """Routing plus handling cost of the first stage."""
    move = sum(instance.move_cost(i, j, t) * v for (i, j, t), v in plan.z.items())
    handle = sum(instance.action_cost(i, t) * v for (i, t), v in plan.y_plus.items())
    handle += sum(instance.action_cost(i, t) * v for (i, t), v in plan.y_minus.items())
    return float(move + handle)


@dataclass(frozen=True)
class EvaluationResult:
    cost_mean: float
    cost_sd: float
    rate_mean: float
    rate_sd: float
    objective_mean: float
    objective_sd: float
    plan_cost: float
    costs: np.ndarray = field(repr=False)  # per-scenario second-stage cost
    rates: np.ndarray = field(repr=False)

    @property
    def n_eval(self) -> int:
        return int(self.costs.shape[0])


def _sd(a: np.ndarray) -> float:
    return float(a.std(ddof=1)) if a.shape[0] > 1 else 0.0


def evaluation_scenarios(instance: NetworkInstance, model: DemandModel, n_eval: int, seed: int):
    """The common evaluation sample; identical for every plan under the same seed."""
    return [sample_scenario(model, stream(seed, "eval", n)) for n in range(n_eval)]


def evaluate_plan(instance: NetworkInstance, model: DemandModel, plan: RebalancePlan, n_eval: int = 100,
                  seed: int = 0, scenarios=None) -> EvaluationResult:
    scenarios = scenarios if scenarios is not None else evaluation_scenarios(instance, model, n_eval, seed)
    costs = np.empty(len(scenarios))
    rates = np.empty(len(scenarios))
    for n, xi in enumerate(scenarios):
        sol = solve_stage2(instance, xi, plan)
        costs[n] = sol.cost
        rates[n] = service_rate(xi, sol)
    pc = plan_cost(instance, plan)
    obj = costs + pc
    return EvaluationResult(float(costs.mean()), _sd(costs), float(rates.mean()), _sd(rates),
                            float(obj.mean()), _sd(obj), pc, costs, rates)
