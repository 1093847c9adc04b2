"""First stage: RV routing and load/unload planning against a separable cost-to-go.

Two encodings of the approximation are available.

``segments`` (default)
    Per action slot, ``ybar`` unit-range columns that each unload one SV
    (raising the net action ``x = y_minus - y_plus`` across one slope segment)
    and ``ybar`` that each load one.  The cost of a unit is its segment slope
    plus the handling cost.  Because slopes are nondecreasing the cheapest
    units are taken first, so the sum reproduces the piecewise-linear value
    exactly, and with integral routing the rest is a network flow.
``epigraph``
    Explicit ``y_plus``, ``y_minus``, the net action ``x`` and one
    epigraph variable per slot with one cut per slope segment.

``layout="graph"`` creates routing columns only for RV edges; ``"dense"``
creates them for every ordered node pair and fixes non-edges to zero.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace

import numpy as np

from .flow import FlowProblem, solve_flow
from .lp import Basis, LinearProgram, LpBuilder, get_backend
from .model import DemandScenario, NetworkInstance, RebalancePlan, demand_sort_key, no_action_plan, to_micro
from .scenarios import stream
from .vfa import ValueFunctionApprox, evaluate_row, total_value

log = logging.getLogger(__name__)

MODES = ("relaxed", "half_integer", "integer", "fixed_z_flow")
LAYOUTS = ("graph", "dense")
ENCODINGS = ("segments", "epigraph")


def half_horizon(T: int) -> int:
    """Last step whose routing stays integral in ``half_integer`` mode."""
    return math.ceil(T / 2)


def zero_vfa(instance: NetworkInstance, theta_max: float | None = None) -> ValueFunctionApprox:
    slots = [(i, t) for t in range(1, instance.T + 1) for i in instance.action_nodes]
    return ValueFunctionApprox.zeros(slots, instance.max_load, theta_max if theta_max is not None else 15.0)


@dataclass(frozen=True, eq=False)
class Stage1Model:
    lp: LinearProgram
    instance: NetworkInstance
    mode: str
    layout: str
    encoding: str
    arcs: tuple  # (i, j, t) per routing column
    z_cols: np.ndarray
    b_cols: np.ndarray
    slots: tuple  # (i, t)
    up_cols: np.ndarray | None = None  # (n_slots, ybar): unload units
    down_cols: np.ndarray | None = None  # (n_slots, ybar): load units
    yp_cols: np.ndarray | None = None
    ym_cols: np.ndarray | None = None
    x_cols: np.ndarray | None = None
    v_cols: np.ndarray | None = None
    epi_rows: np.ndarray | None = None  # (n_slots, 2 ybar)
    occ_cols: dict | None = None  # (i, t) -> RVs leaving node i at step t

    @property
    def ybar(self) -> int:
        return self.instance.max_load


def _integer_arcs(arcs, mode, T):
    if mode == "integer":
        return np.ones(len(arcs), bool)
    if mode == "half_integer":
        h = half_horizon(T)
        return np.array([t <= h for (_, _, t) in arcs], bool)
    return np.zeros(len(arcs), bool)


def _segment_costs(vfa: ValueFunctionApprox, instance: NetworkInstance, slots) -> tuple:
    ybar = instance.max_load
    r = np.array([instance.action_cost(i, t) for (i, t) in slots])
    rows = np.array([vfa.row(i, t) for (i, t) in slots]).reshape(len(slots), 2 * ybar)
    up = rows[:, ybar:] + r[:, None]  # unit k raises x from k to k+1
    down = -rows[:, :ybar][:, ::-1] + r[:, None]  # unit k lowers x from -k+1 to -k
    return up, down


def build_stage1(instance: NetworkInstance, vfa: ValueFunctionApprox | None = None, mode: str = "integer",
                 layout: str = "graph", encoding: str = "segments", z_fixed: dict | None = None,
                 presence_cuts: bool = False) -> Stage1Model:
    if mode not in MODES or layout not in LAYOUTS or encoding not in ENCODINGS:
        raise ValueError(f"unsupported stage-1 options {mode}/{layout}/{encoding}")
    if mode == "fixed_z_flow" and z_fixed is None:
        raise ValueError("fixed_z_flow mode needs z_fixed")
    vfa = vfa if vfa is not None else zero_vfa(instance)
    T, ybar = instance.T, instance.max_load
    V, bbar = instance.fleet_size, instance.rv_capacity
    nodes = sorted(instance.rv_nodes)
    edges = set(instance.rv_edges)
    pairs = sorted(edges) if layout == "graph" else [(i, j) for i in nodes for j in nodes]
    arcs = tuple((i, j, t) for t in range(1, T + 1) for (i, j) in pairs)
    is_edge = np.array([(i, j) in edges for (i, j, _) in arcs], bool)
    B = LpBuilder()
    extra = {}
    z_int = _integer_arcs(arcs, mode, T)
    z_ub = np.where(is_edge, float(V), 0.0)
    z_lb = np.zeros(len(arcs))
    if mode == "fixed_z_flow":
        fixed = np.array([float(z_fixed.get(a, 0.0)) for a in arcs])
        z_lb = z_ub = fixed
    z_cols = B.add_vars(len(arcs), cost=[instance.move_cost(i, j, t) for (i, j, t) in arcs],
                        lb=z_lb, ub=z_ub, integer=z_int)
    b_cols = B.add_vars(len(arcs), cost=0.0, ub=np.where(is_edge, float(bbar * V), 0.0))
    occ = {}
    if encoding == "segments":
        # aggregated occupancy, branched on before single arcs
        h = half_horizon(T)
        for t in range(1, T + 1):
            integral = mode == "integer" or (mode == "half_integer" and t <= h)
            for i in nodes:
                occ[(i, t)] = int(B.add_vars(1, ub=float(V), integer=integral)[0])
        extra["occ_cols"] = occ
    slots = tuple((i, t) for t in range(1, T + 1) for i in instance.action_nodes)
    slot_pos = {s: n for n, s in enumerate(slots)}
    if encoding == "segments":
        up_cost, down_cost = _segment_costs(vfa, instance, slots)
        up = B.add_vars(len(slots) * ybar, cost=up_cost.ravel(), ub=1.0).reshape(len(slots), ybar)
        down = B.add_vars(len(slots) * ybar, cost=down_cost.ravel(), ub=1.0).reshape(len(slots), ybar)
        extra.update(up_cols=up, down_cols=down)
    else:
        y_int = mode in ("integer", "half_integer")
        r = [instance.action_cost(i, t) for (i, t) in slots]
        yp = B.add_vars(len(slots), cost=r, ub=float(ybar), integer=y_int)
        ym = B.add_vars(len(slots), cost=r, ub=float(ybar), integer=y_int)
        xc = B.add_vars(len(slots), cost=0.0, lb=-float(ybar), ub=float(ybar))
        vc = B.add_vars(len(slots), cost=1.0, lb=-np.inf, ub=np.inf)
        extra.update(yp_cols=yp, ym_cols=ym, x_cols=xc, v_cols=vc)

    out_arcs = {}
    in_arcs = {}
    for n, (i, j, t) in enumerate(arcs):
        out_arcs.setdefault((i, t), []).append(n)
        in_arcs.setdefault((j, t + 1), []).append(n)
    z0_in, b0_in = {}, {}
    for (i, j), v in instance.initial_rv.items():
        z0_in[j] = z0_in.get(j, 0) + v
    for (i, j), v in instance.initial_onboard.items():
        b0_in[j] = b0_in.get(j, 0) + v
    # coupling b <= bbar z
    for n in range(len(arcs)):
        B.add_row([b_cols[n], z_cols[n]], [1.0, -float(bbar)], "L", 0.0)
    for (i, t), col in occ.items():
        o = out_arcs.get((i, t), [])
        B.add_row([col] + [z_cols[a] for a in o], [1.0] + [-1.0] * len(o), "E", 0.0)
    # RV conservation
    for t in range(1, T + 1):
        for i in nodes:
            o = out_arcs.get((i, t), [])
            n_in = in_arcs.get((i, t), [])
            cols = [z_cols[a] for a in o] + [z_cols[a] for a in n_in]
            vals = [1.0] * len(o) + [-1.0] * len(n_in)
            B.add_row(cols, vals, "E", z0_in.get(i, 0) if t == 1 else 0.0)
    # onboard SV conservation: out - in - load + unload = initial arrivals
    for t in range(1, T + 1):
        for i in nodes:
            o = out_arcs.get((i, t), [])
            n_in = in_arcs.get((i, t), [])
            cols = [b_cols[a] for a in o] + [b_cols[a] for a in n_in]
            vals = [1.0] * len(o) + [-1.0] * len(n_in)
            s = slot_pos.get((i, t))
            if s is not None:
                if encoding == "segments":
                    cols += list(extra["down_cols"][s]) + list(extra["up_cols"][s])
                    vals += [-1.0] * ybar + [1.0] * ybar
                else:
                    cols += [extra["yp_cols"][s], extra["ym_cols"][s]]
                    vals += [-1.0, 1.0]
            B.add_row(cols, vals, "E", b0_in.get(i, 0) if t == 1 else 0.0)
    if encoding == "segments" and presence_cuts:
        # a unit action needs an RV at the node; valid for optimal plans by the no-simultaneous-action argument
        for s, key in enumerate(slots):
            col = occ.get(key)
            if col is None or not B.is_integer(col):
                continue
            for u in list(extra["up_cols"][s]) + list(extra["down_cols"][s]):
                B.add_row([u, col], [1.0, -1.0], "L", 0.0)
    if encoding == "epigraph":
        for s in range(len(slots)):
            B.add_row([extra["x_cols"][s], extra["ym_cols"][s], extra["yp_cols"][s]], [1.0, -1.0, 1.0], "E", 0.0)
        epi = np.zeros((len(slots), 2 * ybar), dtype=np.int64)
        for s, (i, t) in enumerate(slots):
            row = vfa.row(i, t)
            for n in range(2 * ybar):
                p = n - ybar
                epi[s, n] = B.add_row([extra["v_cols"][s], extra["x_cols"][s]], [1.0, -row[n]], "G",
                                      evaluate_row(row, p) - row[n] * p)
        extra["epi_rows"] = epi
    lp = B.build()
    return Stage1Model(lp, instance, mode, layout, encoding, arcs, z_cols, b_cols, slots, **extra)


def stage1_costs(model: Stage1Model, vfa: ValueFunctionApprox) -> np.ndarray:
    """Objective vector for new slopes (segments encoding only)."""
    if model.encoding != "segments":
        raise ValueError("only the segments encoding keeps the approximation in the costs")
    c = model.lp.c.copy()
    up, down = _segment_costs(vfa, model.instance, model.slots)
    c[model.up_cols.ravel()] = up.ravel()
    c[model.down_cols.ravel()] = down.ravel()
    return c


def model_counts(model: Stage1Model) -> dict:
    return model.lp.counts()


# ------------------------------------------------------------ extraction


def _clean(v, integral):
    return float(round(v)) if integral else float(v)


def extract_plan(model: Stage1Model, x: np.ndarray, integral: bool) -> RebalancePlan:
    tol = 1e-9
    z, b, yp, ym = {}, {}, {}, {}
    for n, arc in enumerate(model.arcs):
        vz, vb = x[model.z_cols[n]], x[model.b_cols[n]]
        if abs(vz) > tol:
            z[arc] = _clean(vz, integral)
        if abs(vb) > tol:
            b[arc] = _clean(vb, integral)
    for s, key in enumerate(model.slots):
        if model.encoding == "segments":
            p = float(x[model.down_cols[s]].sum())
            m = float(x[model.up_cols[s]].sum())
        else:
            p, m = float(x[model.yp_cols[s]]), float(x[model.ym_cols[s]])
        # an optimiser never loads and unloads at once when handling costs are positive
        common = min(p, m)
        p, m = p - common, m - common
        if p > tol:
            yp[key] = _clean(p, integral)
        if m > tol:
            ym[key] = _clean(m, integral)
    return RebalancePlan(z=z, y_plus=yp, y_minus=ym, b=b)


def plan_objective(instance: NetworkInstance, vfa: ValueFunctionApprox, plan: RebalancePlan) -> float:
    """``sum c z + sum r (y+ + y-) + Vbar(y)`` recomputed from the plan."""
    move = sum(instance.move_cost(i, j, t) * v for (i, j, t), v in plan.z.items())
    handle = sum(instance.action_cost(i, t) * v for (i, t), v in plan.y_plus.items())
    handle += sum(instance.action_cost(i, t) * v for (i, t), v in plan.y_minus.items())
    net = {key: plan.net(*key) for key in set(plan.y_plus) | set(plan.y_minus)}
    return move + handle + total_value(vfa, net)


def unattended_actions(instance: NetworkInstance, plan: RebalancePlan, tol: float = 1e-6) -> list:
    """Slots with a load/unload action but no RV leaving the node at that step."""
    present = {}
    for (i, j, t), v in plan.z.items():
        present[(i, t)] = present.get((i, t), 0.0) + v
    keys = set(plan.y_plus) | set(plan.y_minus)
    return sorted(k for k in keys if present.get(k, 0.0) <= tol
                  and (plan.y_plus.get(k, 0.0) > tol or plan.y_minus.get(k, 0.0) > tol))


def plan_to_x(model: Stage1Model, plan: RebalancePlan) -> np.ndarray:
    """Column vector of a plan in the segments encoding (cheapest units first)."""
    x = np.zeros(model.lp.n_vars)
    for n, arc in enumerate(model.arcs):
        x[model.z_cols[n]] = plan.z.get(arc, 0.0)
        x[model.b_cols[n]] = plan.b.get(arc, 0.0)
    for (i, j, t), v in plan.z.items():
        if (i, t) in model.occ_cols:
            x[model.occ_cols[(i, t)]] += v
    for s, (i, t) in enumerate(model.slots):
        net = int(round(plan.net(i, t)))
        if net > 0:
            x[model.up_cols[s, :net]] = 1.0
        elif net < 0:
            x[model.down_cols[s, :-net]] = 1.0
    return x


def round_routing(model: Stage1Model, x: np.ndarray) -> dict:
    """Integral routing that follows the largest residual arc values of ``x``, one RV at a time."""
    inst = model.instance
    resid = x[model.z_cols].copy()
    open_arc = model.lp.ub[model.z_cols] > 0
    out_arcs = {}
    for n, (i, j, t) in enumerate(model.arcs):
        if open_arc[n]:
            out_arcs.setdefault((i, t), []).append(n)
    positions = {}
    for (_, j), v in inst.initial_rv.items():
        positions[j] = positions.get(j, 0) + int(v)
    z = {}
    for t in range(1, inst.T + 1):
        nxt = {}
        for i in sorted(positions):
            for _ in range(positions[i]):
                cands = out_arcs.get((i, t), [])
                if not cands:
                    return {}
                n = max(cands, key=lambda a: (resid[a], -a))
                resid[n] -= 1.0
                arc = model.arcs[n]
                z[arc] = z.get(arc, 0) + 1
                nxt[arc[1]] = nxt.get(arc[1], 0) + 1
        positions = nxt
    return z


@dataclass(frozen=True)
class Stage1Result:
    plan: RebalancePlan
    objective: float
    status: str
    bound: float = float("nan")
    gap: float = 0.0
    nodes: int = 0
    iterations: int = 0
    seconds: float = 0.0
    timed_out: bool = False
    warnings: tuple = ()
    x: np.ndarray | None = field(default=None, repr=False)


class Stage1Solver:
    """Keeps the model and the last basis/incumbent so repeated solves warm start."""

    def __init__(self, instance: NetworkInstance, mode: str = "integer", layout: str = "graph",
                 encoding: str = "segments", rel_gap: float = 5e-3, time_limit: float = float("inf"),
                 backend: str = "native", z_fixed: dict | None = None, presence_cuts: bool = True):
        self.instance = instance
        self.mode = mode
        self.rel_gap = rel_gap
        self.time_limit = time_limit
        self.backend = get_backend(backend)
        self.model = build_stage1(instance, None, mode, layout, encoding, z_fixed,
                                  presence_cuts=presence_cuts and mode in ("integer", "half_integer"))
        self._basis: Basis | None = None
        self._incumbent = None

    def lp_for(self, vfa: ValueFunctionApprox) -> LinearProgram:
        m = self.model
        if m.encoding == "segments":
            return m.lp.with_costs(stage1_costs(m, vfa))
        return build_stage1(self.instance, vfa, m.mode, m.layout, m.encoding,
                            None if m.mode != "fixed_z_flow" else self._fixed()).lp

    def _priority(self) -> np.ndarray:
        m = self.model
        prio = np.zeros(m.lp.n_vars, dtype=np.int64)
        prio[m.z_cols] = 1
        prio[list(m.occ_cols.values())] = 2
        return prio

    def _complete(self, vfa, x):
        """Round the routing of a node LP point and finish it with the fixed-routing flow."""
        z = round_routing(self.model, x)
        if not z:
            return None
        plan, _ = solve_fixed_z_flow(self.instance, vfa, z)
        return None if plan is None else plan_to_x(self.model, plan)

    def _fixed(self):
        lp = self.model.lp
        return {a: lp.lb[c] for a, c in zip(self.model.arcs, self.model.z_cols)}

    def solve(self, vfa: ValueFunctionApprox) -> Stage1Result:
        t0 = time.perf_counter()
        lp = self.lp_for(vfa)
        native = self.backend.name == "native"
        warm = {"basis": self._basis} if native and self.model.encoding == "segments" else {}
        if not lp.integer.any():
            sol = self.backend.solve_lp(lp, **warm)
            status, bound, gap, nodes, timed_out = sol.status, sol.objective, 0.0, 0, False
        else:
            if native and self.model.encoding == "segments":
                warm.update(incumbent=self._incumbent, priority=self._priority(),
                            heuristic=lambda x: self._complete(vfa, x))
            sol = self.backend.solve_mip(lp, rel_gap=self.rel_gap, time_limit=self.time_limit, **warm)
            status, bound, gap, nodes, timed_out = sol.status, sol.bound, sol.gap, sol.nodes, sol.timed_out
        if not np.all(np.isfinite(sol.x)):
            if status not in ("time-limit", "iteration-limit"):
                raise RuntimeError(f"stage-1 solve failed with status {status}")
            # no incumbent within the limit: idle routing is always feasible
            log.warning("first stage hit its limit without a feasible point; returning the no-action plan")
            plan = no_action_plan(self.instance)
            return Stage1Result(plan, plan_objective(self.instance, vfa, plan), status, bound, float("inf"), nodes,
                                sol.iterations, time.perf_counter() - t0, True, (), None)
        if native:
            self._basis = sol.basis
            self._incumbent = sol.x
        integral = self.mode in ("integer", "fixed_z_flow") and _is_integral(sol.x)
        plan = extract_plan(self.model, sol.x, integral)
        if self.mode == "integer" and not integral:
            # only routing is branched on; loads follow from the fixed-routing flow
            z = {a: round(v) for a, v in plan.z.items() if round(v)}
            flow_plan, _ = solve_fixed_z_flow(self.instance, vfa, z)
            if flow_plan is not None:
                plan = flow_plan
        warnings = ()
        if self.mode == "integer":
            bad = unattended_actions(self.instance, plan)
            if bad and any(self.instance.action_cost(i, t) > 0 for i, t in bad):
                log.warning("actions without an RV present at %s", bad[:5])
                warnings = tuple(bad)
        if self.mode == "integer":
            obj = plan_objective(self.instance, vfa, plan)
        else:
            obj = float(lp.c @ sol.x) + vfa.theta0
        return Stage1Result(plan, obj, status, bound, gap, nodes, sol.iterations, time.perf_counter() - t0,
                            timed_out, warnings, sol.x)


def _is_integral(x, tol=1e-6):
    return bool(np.all(np.abs(x - np.round(x)) <= tol))


def solve_stage1(instance: NetworkInstance, vfa: ValueFunctionApprox | None = None, mode: str = "integer",
                 rel_gap: float = 5e-3, time_limit: float = float("inf"), layout: str = "graph",
                 encoding: str = "segments", backend: str = "native", z_fixed: dict | None = None) -> Stage1Result:
    vfa = vfa if vfa is not None else zero_vfa(instance)
    return Stage1Solver(instance, mode, layout, encoding, rel_gap, time_limit, backend, z_fixed).solve(vfa)


# ------------------------------------------------------------ fixed routing as a flow


def solve_fixed_z_flow(instance: NetworkInstance, vfa: ValueFunctionApprox, z: dict):
    """Onboard flows and actions for fixed routing, as an integer min-cost flow.

    Node ``(i, t)`` for ``t = 1..T+1`` plus a ground node.  Onboard arcs
    ``(i, t) -> (j, t+1)`` have capacity ``bbar * z``; each unload unit is an
    arc into the ground node and each load unit an arc out of it.
    Returns ``(plan, objective)`` or ``(None, inf)`` when infeasible.
    """
    T, ybar, bbar = instance.T, instance.max_load, instance.rv_capacity
    nodes = sorted(instance.rv_nodes)
    pos = {i: n for n, i in enumerate(nodes)}
    N = len(nodes)
    node = lambda i, t: (t - 1) * N + pos[i]
    ground = N * (T + 1)
    supply = np.zeros(ground + 1, dtype=np.int64)
    for (i, j), v in instance.initial_onboard.items():
        supply[node(j, 1)] += v
    supply[ground] = -supply.sum()
    tail, head, cap, cost, kind = [], [], [], [], []

    def arc(u, v, q, c, what):
        tail.append(u)
        head.append(v)
        cap.append(q)
        cost.append(c)
        kind.append(what)

    for (i, j, t), v in sorted(z.items()):
        if v > 0:
            arc(node(i, t), node(j, t + 1), int(round(v)) * bbar, 0, ("b", (i, j, t)))
    for j in nodes:
        arc(node(j, T + 1), ground, int(bbar * instance.fleet_size), 0, ("end", j))
    slots = [(i, t) for t in range(1, T + 1) for i in instance.action_nodes]
    up, down = _segment_costs(vfa, instance, slots)
    for s, (i, t) in enumerate(slots):
        for k in range(ybar):
            arc(node(i, t), ground, 1, to_micro(up[s, k]), ("up", (i, t)))
            arc(ground, node(i, t), 1, to_micro(down[s, k]), ("down", (i, t)))
    prob = FlowProblem(ground + 1, supply, np.array(tail, dtype=np.int64), np.array(head, dtype=np.int64),
                       np.array(cap, dtype=np.int64), np.array(cost, dtype=np.int64))
    sol = solve_flow(prob)
    if not sol.optimal:
        return None, float("inf")
    b, yp, ym = {}, {}, {}
    for a, (what, key) in enumerate(kind):
        f = int(sol.flow[a])
        if not f:
            continue
        if what == "b":
            b[key] = b.get(key, 0) + f
        elif what == "up":
            ym[key] = ym.get(key, 0) + f
        elif what == "down":
            yp[key] = yp.get(key, 0) + f
    for key in set(yp) & set(ym):
        m = min(yp[key], ym[key])
        yp[key] -= m
        ym[key] -= m
    plan = RebalancePlan(z={k: v for k, v in z.items() if v}, y_plus=yp, y_minus=ym, b=b)
    return plan, plan_objective(instance, vfa, plan)


# ------------------------------------------------------------ random actions


def random_plan(instance: NetworkInstance, seed) -> RebalancePlan:
    """Uniform net action in ``{-ybar..ybar}`` per slot; routing left empty."""
    rng = seed if isinstance(seed, np.random.Generator) else stream(int(seed), "m3")
    ybar = instance.max_load
    slots = [(i, t) for t in range(1, instance.T + 1) for i in instance.action_nodes]
    draws = rng.integers(-ybar, ybar + 1, size=len(slots))
    yp = {s: int(-v) for s, v in zip(slots, draws.tolist()) if v < 0}
    ym = {s: int(v) for s, v in zip(slots, draws.tolist()) if v > 0}
    return RebalancePlan(y_plus=yp, y_minus=ym)


# ------------------------------------------------------------ deterministic monolithic model


@dataclass(frozen=True, eq=False)
class DeterministicModel:
    lp: LinearProgram  # objective includes the constant loss offset
    arcs: tuple
    z_cols: np.ndarray
    b_cols: np.ndarray
    slots: tuple
    yp_cols: np.ndarray
    ym_cols: np.ndarray
    w_cols: dict  # (i, j, t, k) -> list of (column, value)
    d_cols: dict  # (i, t) -> column
    occ_cols: dict  # (i, t) -> column
    instance: NetworkInstance | None = None


def build_deterministic(instance: NetworkInstance, scenario: DemandScenario,
                        presence_cuts: bool = False) -> DeterministicModel:
    """The full nested-flow model with one journey column per tuple and distinct value.

    Only routing and the per-node occupancy are integer-marked: once routing is
    integral the bikes form a single-commodity network, so loads, actions and
    journeys come out integral at a vertex.  ``presence_cuts`` bounds each
    action by what the RVs present can hold; an optimal plan never acts on
    both sides of a slot, so only fractional points are cut off and the
    relaxed study builds without them.
    """
    T, ybar = instance.T, instance.max_load
    V, bbar = instance.fleet_size, instance.rv_capacity
    nodes = sorted(instance.rv_nodes)
    stations = sorted(instance.sv_nodes)
    edges = sorted(instance.rv_edges)
    arcs = tuple((i, j, t) for t in range(1, T + 1) for (i, j) in edges)
    B = LpBuilder()
    z_cols = B.add_vars(len(arcs), cost=[instance.move_cost(*a) for a in arcs], ub=float(V), integer=True)
    b_cols = B.add_vars(len(arcs), cost=0.0, ub=float(bbar * V))
    occ = {(i, t): int(B.add_vars(1, ub=float(V), integer=True)[0]) for t in range(1, T + 1) for i in nodes}
    slots = tuple((i, t) for t in range(1, T + 1) for i in instance.action_nodes)
    r = [instance.action_cost(i, t) for (i, t) in slots]
    yp = B.add_vars(len(slots), cost=r, ub=float(ybar))
    ym = B.add_vars(len(slots), cost=r, ub=float(ybar))
    w_cols = {}
    for key in sorted(scenario.demand, key=demand_sort_key):
        vals, counts = np.unique(scenario.value_slopes[key], return_counts=True)
        cols = B.add_vars(len(vals), cost=-vals, ub=counts.astype(float))
        w_cols[key] = list(zip(cols.tolist(), vals.tolist()))
    d_cols = {}
    for t in range(1, T + 1):
        for i in stations:
            d_cols[(i, t)] = int(B.add_vars(1, cost=0.0, ub=float(instance.station_capacity[i]))[0])
    # constant loss offset as a pinned column, so relative gaps refer to the loss objective
    B.add_vars(1, cost=scenario.loss_offset(), lb=1.0, ub=1.0)
    out_arcs, in_arcs = {}, {}
    for n, (i, j, t) in enumerate(arcs):
        out_arcs.setdefault((i, t), []).append(n)
        in_arcs.setdefault((j, t + 1), []).append(n)
    z0_in, b0_in = {}, {}
    for (i, j), v in instance.initial_rv.items():
        z0_in[j] = z0_in.get(j, 0) + v
    for (i, j), v in instance.initial_onboard.items():
        b0_in[j] = b0_in.get(j, 0) + v
    slot_pos = {s: n for n, s in enumerate(slots)}
    for n in range(len(arcs)):
        B.add_row([b_cols[n], z_cols[n]], [1.0, -float(bbar)], "L", 0.0)
    for (i, t), col in occ.items():
        o = out_arcs.get((i, t), [])
        B.add_row([col] + [z_cols[a] for a in o], [1.0] + [-1.0] * len(o), "E", 0.0)
    if presence_cuts:
        for s, key in enumerate(slots):
            if key in occ:
                for y in (yp[s], ym[s]):
                    B.add_row([y, occ[key]], [1.0, -float(min(ybar, bbar))], "L", 0.0)
    for t in range(1, T + 1):
        for i in nodes:
            o, n_in = out_arcs.get((i, t), []), in_arcs.get((i, t), [])
            B.add_row([z_cols[a] for a in o] + [z_cols[a] for a in n_in], [1.0] * len(o) + [-1.0] * len(n_in),
                      "E", z0_in.get(i, 0) if t == 1 else 0.0)
            cols = [b_cols[a] for a in o] + [b_cols[a] for a in n_in]
            vals = [1.0] * len(o) + [-1.0] * len(n_in)
            s = slot_pos.get((i, t))
            if s is not None:
                cols += [yp[s], ym[s]]
                vals += [-1.0, 1.0]
            B.add_row(cols, vals, "E", b0_in.get(i, 0) if t == 1 else 0.0)
    # station inventory: d^t - d^{t-1} + departures - arrivals + y+ - y- = in-progress arrivals
    dep, arr = {}, {}
    for (i, j, t, k), cols in w_cols.items():
        for c, _ in cols:
            dep.setdefault((i, t), []).append(c)
            if t + k <= T:
                arr.setdefault((j, t + k), []).append(c)
    prog = instance.arrivals_in_progress()
    for t in range(1, T + 1):
        for i in stations:
            cols = [d_cols[(i, t)]]
            vals = [1.0]
            if t > 1:
                cols.append(d_cols[(i, t - 1)])
                vals.append(-1.0)
            cols += dep.get((i, t), [])
            vals += [1.0] * len(dep.get((i, t), []))
            cols += arr.get((i, t), [])
            vals += [-1.0] * len(arr.get((i, t), []))
            s = slot_pos.get((i, t))
            if s is not None:
                cols += [yp[s], ym[s]]
                vals += [1.0, -1.0]
            rhs = prog.get((i, t), 0) + (instance.initial_fill.get(i, 0) if t == 1 else 0)
            B.add_row(cols, vals, "E", rhs)
    return DeterministicModel(B.build(), arcs, z_cols, b_cols, slots, yp, ym,
                              w_cols, d_cols, occ, instance)


def _fix_routing(model: DeterministicModel, x) -> LinearProgram:
    lb, ub = model.lp.lb.copy(), model.lp.ub.copy()
    cols = np.concatenate([model.z_cols, list(model.occ_cols.values())]).astype(int)
    vals = np.round(x[cols])
    lb[cols] = ub[cols] = vals
    return replace(model.lp.relaxed(), lb=lb, ub=ub)


def _complete_deterministic(model: DeterministicModel, eng, x):
    """Round the routing of a node LP point and solve the rest with that routing pinned."""
    z = round_routing(model, x)
    if not z:
        return None
    full = np.zeros(model.lp.n_vars)
    for a, c in zip(model.arcs, model.z_cols):
        full[c] = z.get(a, 0)
    for (i, t), c in model.occ_cols.items():
        full[c] = sum(v for (a, _, s), v in z.items() if a == i and s == t)
    sol = eng.solve_lp(_fix_routing(model, full))
    return sol.x if sol.status == "optimal" else None


@dataclass(frozen=True)
class DeterministicResult:
    plan: RebalancePlan
    objective: float  # loss convention, includes the constant offset
    bound: float
    status: str
    seconds: float
    timed_out: bool
    nodes: int = 0
    served: dict = field(default_factory=dict)


def solve_deterministic_drrp(instance: NetworkInstance, scenario: DemandScenario, rel_gap: float = 5e-3,
                             time_limit: float = float("inf"), relax: bool = False,
                             backend: str = "native") -> DeterministicResult:
    t0 = time.perf_counter()
    model = build_deterministic(instance, scenario, presence_cuts=not relax)
    eng = get_backend(backend)
    lp = model.lp.relaxed() if relax else model.lp
    if relax:
        sol = eng.solve_lp(lp)
        bound, nodes, timed_out = sol.objective, 0, sol.status == "time-limit"
    else:
        kw = {}
        if eng.name == "native":
            prio = np.zeros(lp.n_vars, dtype=np.int64)
            prio[model.z_cols] = 1
            prio[list(model.occ_cols.values())] = 2
            kw = dict(priority=prio, heuristic=lambda x: _complete_deterministic(model, eng, x))
        sol = eng.solve_mip(lp, rel_gap=rel_gap, time_limit=time_limit, **kw)
        bound, nodes, timed_out = sol.bound, sol.nodes, sol.timed_out
        if np.all(np.isfinite(sol.x)) and not _is_integral(sol.x):
            # degenerate vertex with integral routing: pin the routing and take a vertex of the flow part
            fixed = _fix_routing(model, sol.x)
            again = eng.solve_lp(fixed)
            if again.status == "optimal" and again.objective <= sol.objective + 1e-7:
                sol = replace(sol, x=again.x)
    secs = time.perf_counter() - t0
    if not np.all(np.isfinite(sol.x)):
        return DeterministicResult(RebalancePlan(), float("nan"), bound, sol.status, secs, timed_out,
                                   nodes)
    x = sol.x
    integral = not relax
    z = {a: _clean(x[c], integral) for a, c in zip(model.arcs, model.z_cols) if abs(x[c]) > 1e-9}
    b = {a: _clean(x[c], integral) for a, c in zip(model.arcs, model.b_cols) if abs(x[c]) > 1e-9}
    yp, ym = {}, {}
    for s, key in enumerate(model.slots):
        p, m = float(x[model.yp_cols[s]]), float(x[model.ym_cols[s]])
        common = min(p, m)
        if p - common > 1e-9:
            yp[key] = _clean(p - common, integral)
        if m - common > 1e-9:
            ym[key] = _clean(m - common, integral)
    served = {key: float(sum(x[c] for c, _ in cols)) for key, cols in model.w_cols.items()}
    plan = RebalancePlan(z=z, y_plus=yp, y_minus=ym, b=b)
    return DeterministicResult(plan, float(sol.objective), float(bound), sol.status,
                               secs, timed_out, nodes, {k: v for k, v in served.items() if v > 1e-9})
