"""Second stage: customer journeys as a min-cost flow.

Node ``(i, t)`` for every station and step, plus one sink.  The arc leaving
``(i, t)`` towards ``(i, t+1)`` (the sink when ``t = T``) carries the fill
level at the end of step ``t`` and is bounded by the station capacity.  Each
potential journey is a unit arc of cost ``-value`` from ``(i, t)`` to
``(j, t+k)``, or to the sink when it ends after the horizon.  Every node also
has a penalty arc from and to the sink so that SVs may be created or destroyed
at cost ``r_p``; this keeps the problem feasible for any first-stage action.

Costs are integer micro-currency.  Fractional actions are handled by scaling
all capacities and supplies by ``scale``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow import FlowProblem, FlowSolution, extract_bound_duals, residual_distances, solve_flow
from .model import MICRO, DemandScenario, NetworkInstance, RebalancePlan, Stage2Solution, demand_sort_key
from .model import to_micro

FRACTIONAL_SCALE = 10_000


@dataclass(frozen=True)
class Stage2Network:
    problem: FlowProblem
    stations: tuple
    journey_arcs: dict  # (i, j, t, k) -> arc ids, most valuable first
    fill_arcs: dict  # (i, t) -> arc id
    penalty_arcs: dict  # (i, t) -> (create arc, destroy arc)
    offset: float
    scale: int

    @property
    def sink(self) -> int:
        return self.problem.n_nodes - 1


def _node_index(stations):
    pos = {s: n for n, s in enumerate(stations)}
    S = len(stations)
    return lambda i, t: (t - 1) * S + pos[i]


def _actions_from(y):
    """Accept a plan or a ``(i, t) -> net SVs added`` mapping."""
    if isinstance(y, RebalancePlan):
        out = {}
        for key, v in y.y_minus.items():
            out[key] = out.get(key, 0.0) + v
        for key, v in y.y_plus.items():
            out[key] = out.get(key, 0.0) - v
        return out
    return dict(y or {})


def _is_integral(values) -> bool:
    return all(abs(v - round(v)) <= 1e-9 for v in values)


def build_stage2_network(instance: NetworkInstance, scenario: DemandScenario, y=None,
                         scale: int | None = None) -> Stage2Network:
    """``y`` is a :class:`RebalancePlan` or a map ``(i, t) -> y_minus - y_plus``."""
    net = _actions_from(y)
    if scale is None:
        scale = 1 if _is_integral(net.values()) else FRACTIONAL_SCALE
    T = instance.T
    stations = tuple(sorted(instance.sv_nodes))
    node = _node_index(stations)
    n_nodes = len(stations) * T + 1
    sink = n_nodes - 1
    supply = np.zeros(n_nodes, dtype=np.int64)
    tail, head, cap, cost = [], [], [], []

    def arc(u, v, c, q):
        tail.append(u)
        head.append(v)
        cost.append(c)
        cap.append(q)
        return len(tail) - 1

    for i in stations:
        supply[node(i, 1)] += instance.initial_fill.get(i, 0) * scale
    for (i, t), v in net.items():
        if i not in instance.station_capacity or not 1 <= t <= T:
            raise ValueError(f"action at ({i}, {t}) is outside the station-time grid")
        supply[node(i, t)] += int(round(v * scale))
    for (j, t), w in instance.arrivals_in_progress().items():
        supply[node(j, t)] += w * scale
    supply[sink] = -int(supply[:sink].sum())

    fill_arcs = {}
    for t in range(1, T + 1):
        for i in stations:
            nxt = node(i, t + 1) if t < T else sink
            fill_arcs[(i, t)] = arc(node(i, t), nxt, 0, instance.station_capacity[i] * scale)

    journey_arcs = {}
    for key in sorted(scenario.demand, key=demand_sort_key):
        i, j, t, k = key
        if t < 1 or t > T:
            continue
        values = scenario.value_slopes[key]
        u = node(i, t)
        v = node(j, t + k) if t + k <= T else sink
        ids = [arc(u, v, -to_micro(val), scale) for val in values[::-1]]
        journey_arcs[key] = tuple(ids)

    total_demand = scenario.total * scale
    pen_cap = int(total_demand + np.abs(supply).sum() + instance.fleet_size * instance.rv_capacity * scale)
    rp = to_micro(instance.penalty)
    penalty_arcs = {}
    for t in range(1, T + 1):
        for i in stations:
            penalty_arcs[(i, t)] = (arc(sink, node(i, t), rp, pen_cap), arc(node(i, t), sink, rp, pen_cap))

    problem = FlowProblem(n_nodes, supply, np.array(tail, dtype=np.int64), np.array(head, dtype=np.int64),
                          np.array(cap, dtype=np.int64), np.array(cost, dtype=np.int64))
    return Stage2Network(problem, stations, journey_arcs, fill_arcs, penalty_arcs,
                         scenario.loss_offset(), scale)


def solution_from_flow(network: Stage2Network, flow: FlowSolution) -> Stage2Solution:
    if not flow.optimal:
        raise RuntimeError("penalized second stage reported infeasible")
    S = network.scale
    f = flow.flow
    served = {key: f[list(ids)].sum() / S for key, ids in network.journey_arcs.items()}
    served = {k: (int(v) if S == 1 else float(v)) for k, v in served.items() if v}
    penalties = {}
    for key, (a_in, a_out) in network.penalty_arcs.items():
        p_plus, p_minus = f[a_in] / S, f[a_out] / S
        if p_plus or p_minus:
            penalties[key] = (int(p_plus), int(p_minus)) if S == 1 else (float(p_plus), float(p_minus))
    keys = list(network.fill_arcs)
    arcs = [network.fill_arcs[k] for k in keys]
    lower, upper = extract_bound_duals(network.problem, flow, arcs)
    duals = {k: (upper[n] / MICRO, lower[n] / MICRO) for n, k in enumerate(keys)}
    flow_cost = flow.cost / S / MICRO
    fill = {k: (int(v) if S == 1 else float(v)) for k, v in fill_levels(network, flow).items()}
    return Stage2Solution(served=served, penalties=penalties, cost=flow_cost + network.offset, duals=duals,
                          flow_cost=flow_cost, offset=network.offset, scale=S, fill=fill)


def solve_stage2(instance: NetworkInstance, scenario: DemandScenario, y=None,
                 scale: int | None = None, return_network: bool = False):
    """Loss-convention value ``sum l(f - w) + r_p sum(p+ + p-)`` with fill-bound duals."""
    network = build_stage2_network(instance, scenario, y, scale)
    flow = solve_flow(network.problem)
    sol = solution_from_flow(network, flow)
    if return_network:
        return sol, network, flow
    return sol


def service_rate(scenario: DemandScenario, solution: Stage2Solution) -> float:
    total = scenario.total
    if total == 0:
        return 1.0
    return float(sum(solution.served.values())) / total


def fill_levels(network: Stage2Network, flow: FlowSolution) -> dict:
    """End-of-step fill levels read off the horizontal arcs."""
    return {key: flow.flow[a] / network.scale for key, a in network.fill_arcs.items()}


def conservation_residual(instance: NetworkInstance, y, solution: Stage2Solution) -> float:
    """Violation of the end-of-horizon SV accounting identity.

    SVs parked at the end (read from the fill arcs) plus those still riding
    past the horizon must equal the initial stock plus net actions, in-progress
    arrivals and net penalty creation.
    """
    T = instance.T
    net = _actions_from(y)
    start = sum(instance.initial_fill.get(i, 0) for i in instance.sv_nodes)
    arriving = sum(instance.arrivals_in_progress().values())
    created = sum(p - m for p, m in solution.penalties.values())
    end = sum(v for (i, t), v in solution.fill.items() if t == T)
    riding = sum(w for (i, j, t, k), w in solution.served.items() if t + k > T)
    return abs((end + riding) - (start + sum(net.values()) + arriving + created))


def marginal_values(network: Stage2Network, flow: FlowSolution) -> dict:
    """Exact one-sided slopes of the second-stage cost in each node's net action.

    ``(i, t) -> (right, left)`` with ``right = V(y + e) - V(y)`` and
    ``left = V(y) - V(y - e)`` for one extra SV added or removed at ``(i, t)``.
    With a scaled network the values are per unit of flow.
    """
    to_sink, from_sink = residual_distances(network.problem, flow, network.sink)
    node = _node_index(network.stations)
    out = {}
    for (i, t) in network.fill_arcs:
        v = node(i, t)
        out[(i, t)] = (to_sink[v] / MICRO, -from_sink[v] / MICRO)
    return out


def stage2_lp(network: Stage2Network):
    """The same network as a generic LP (used to check integrality of the relaxation)."""
    from .flow import flow_lp

    return flow_lp(network.problem)
