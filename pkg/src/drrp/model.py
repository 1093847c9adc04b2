"""Problem data types, index conventions and instance validation.

Node identifiers are plain ints.  Every keyed map uses tuples:

* RV arcs ``(i, j, t)`` with ``t = 1..T`` (departure step),
* action slots ``(i, t)``,
* demand tuples ``(i, j, t, k)`` (origin, destination, departure step, duration).

Currency is carried as float in the public types and converted to integer
micro-units (:func:`to_micro`) wherever exact comparisons are needed.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

MICRO = 1_000_000


def to_micro(value: float) -> int:
    """Currency -> integer micro-units (round half away from zero)."""
    return int(np.floor(abs(value) * MICRO + 0.5)) * (1 if value >= 0 else -1)


class FrozenMap(dict):
    """A dict that refuses mutation after construction."""

    def _blocked(self, *args, **kwargs):
        raise TypeError("FrozenMap is read-only")

    __setitem__ = __delitem__ = _blocked
    clear = pop = popitem = setdefault = update = _blocked

    def __reduce__(self):
        return (FrozenMap, (dict(self),))

    def __hash__(self):  # pragma: no cover - convenience only
        return hash(tuple(sorted(self.items())))


def _freeze(mapping, keyfn=tuple, valfn=lambda v: v):
    if mapping is None:
        return FrozenMap()
    items = mapping.items() if isinstance(mapping, Mapping) else mapping
    return FrozenMap((keyfn(k), valfn(v)) for k, v in items)


def _as_int_key(k):
    return int(k)


@dataclass(frozen=True)
class NetworkInstance:
    """Deterministic problem data: both graphs, capacities, costs, initial state."""

    sv_nodes: tuple
    sv_edges: tuple
    rv_nodes: tuple
    rv_edges: tuple
    horizon: int
    max_duration: int
    station_capacity: Mapping
    rv_capacity: int
    max_load: int
    fleet_size: int
    initial_fill: Mapping
    initial_rv: Mapping
    rv_move_cost: Mapping = field(default_factory=dict)
    load_cost: Mapping = field(default_factory=dict)
    penalty: float = 20.0
    initial_onboard: Mapping = field(default_factory=dict)
    in_progress: Mapping = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sv_nodes", tuple(int(i) for i in self.sv_nodes))
        object.__setattr__(self, "rv_nodes", tuple(int(i) for i in self.rv_nodes))
        object.__setattr__(self, "sv_edges", tuple((int(i), int(j)) for i, j in self.sv_edges))
        object.__setattr__(self, "rv_edges", tuple((int(i), int(j)) for i, j in self.rv_edges))
        object.__setattr__(self, "station_capacity", _freeze(self.station_capacity, _as_int_key, int))
        object.__setattr__(self, "initial_fill", _freeze(self.initial_fill, _as_int_key, int))
        object.__setattr__(self, "initial_rv", _freeze(self.initial_rv, tuple, int))
        object.__setattr__(self, "initial_onboard", _freeze(self.initial_onboard, tuple, int))
        object.__setattr__(self, "in_progress", _freeze(self.in_progress, tuple, int))
        object.__setattr__(self, "rv_move_cost", _freeze(self.rv_move_cost, tuple, float))
        object.__setattr__(self, "load_cost", _freeze(self.load_cost, tuple, float))
        object.__setattr__(self, "penalty", float(self.penalty))

    @property
    def T(self) -> int:
        return self.horizon

    @property
    def K(self) -> int:
        return self.max_duration

    @property
    def action_nodes(self) -> tuple:
        """Nodes where loading/unloading is possible (N_SV ∩ N_RV), sorted."""
        rv = set(self.rv_nodes)
        return tuple(sorted(i for i in self.sv_nodes if i in rv))

    def move_cost(self, i: int, j: int, t: int) -> float:
        return self.rv_move_cost.get((i, j, t), 0.0)

    def action_cost(self, i: int, t: int) -> float:
        return self.load_cost.get((i, t), 0.0)

    def arrivals_in_progress(self) -> dict:
        """In-progress trips folded to ``(j, arrival_step) -> count`` within the horizon."""
        out: dict = {}
        for (i, j, t, k), w in self.in_progress.items():
            arr = t + k
            if 1 <= arr <= self.horizon and w:
                out[(j, arr)] = out.get((j, arr), 0) + w
        return out


@dataclass(frozen=True)
class DemandScenario:
    """One draw of demand: counts per tuple and ascending journey values."""

    demand: Mapping
    value_slopes: Mapping

    def __post_init__(self):
        dem = FrozenMap((tuple(k), int(v)) for k, v in self.demand.items() if int(v) > 0)
        slopes = {}
        for key in dem:
            arr = np.asarray(self.value_slopes[key], dtype=float).copy()
            arr.setflags(write=False)
            slopes[key] = arr
        object.__setattr__(self, "demand", dem)
        object.__setattr__(self, "value_slopes", FrozenMap(slopes))

    @property
    def total(self) -> int:
        return sum(self.demand.values())

    def loss_offset(self) -> float:
        """Loss when nobody is served, i.e. the sum of every journey value."""
        return float(sum(float(np.sum(v)) for v in self.value_slopes.values()))

    @staticmethod
    def empty() -> "DemandScenario":
        return DemandScenario({}, {})


def _clean(mapping, cast=float, tol=1e-12):
    return FrozenMap((tuple(k), cast(v)) for k, v in mapping.items() if abs(v) > tol)


@dataclass(frozen=True)
class RebalancePlan:
    """First-stage decision.  Only nonzero entries are stored."""

    z: Mapping = field(default_factory=dict)
    y_plus: Mapping = field(default_factory=dict)
    y_minus: Mapping = field(default_factory=dict)
    b: Mapping = field(default_factory=dict)

    def __post_init__(self):
        for name in ("z", "y_plus", "y_minus", "b"):
            object.__setattr__(self, name, _clean(getattr(self, name)))

    def net(self, i: int, t: int) -> float:
        """SVs added to station ``i`` at step ``t`` (unload minus load)."""
        return self.y_minus.get((i, t), 0.0) - self.y_plus.get((i, t), 0.0)

    def is_integral(self, tol: float = 1e-6) -> bool:
        for m in (self.z, self.y_plus, self.y_minus, self.b):
            for v in m.values():
                if abs(v - round(v)) > tol:
                    return False
        return True

    def rounded(self) -> "RebalancePlan":
        r = lambda m: {k: int(round(v)) for k, v in m.items()}
        return RebalancePlan(r(self.z), r(self.y_plus), r(self.y_minus), r(self.b))


@dataclass(frozen=True)
class Stage2Solution:
    served: Mapping
    penalties: Mapping
    cost: float
    duals: Mapping
    flow_cost: float = 0.0
    offset: float = 0.0
    scale: int = 1
    fill: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class TupleIndex:
    """Canonical orderings shared by every solver module.

    Demand tuples run over ``t`` then ``i`` then ``j`` then ``k``; action slots
    over ``t`` then ``i``; RV arcs over ``t`` then the order of ``rv_edges``
    sorted lexicographically.
    """

    demand: tuple
    actions: tuple
    rv_arcs: tuple

    @property
    def demand_pos(self) -> dict:
        return {key: n for n, key in enumerate(self.demand)}

    @property
    def action_pos(self) -> dict:
        return {key: n for n, key in enumerate(self.actions)}

    @property
    def rv_arc_pos(self) -> dict:
        return {key: n for n, key in enumerate(self.rv_arcs)}


def enumerate_tuples(instance: NetworkInstance) -> TupleIndex:
    T, K = instance.horizon, instance.max_duration
    sv_edges = sorted(instance.sv_edges)
    rv_edges = sorted(instance.rv_edges)
    acts = instance.action_nodes
    demand = tuple((i, j, t, k) for t in range(1, T + 1) for (i, j) in sv_edges for k in range(K + 1))
    actions = tuple((i, t) for t in range(1, T + 1) for i in acts)
    arcs = tuple((i, j, t) for t in range(1, T + 1) for (i, j) in rv_edges)
    return TupleIndex(demand, actions, arcs)


def demand_sort_key(key):
    i, j, t, k = key
    return (t, i, j, k)


# ---------------------------------------------------------------- validation


def validate_instance(inst: NetworkInstance) -> list:
    """Return a list of human-readable violations; empty means valid."""
    out = []
    sv, rv = set(inst.sv_nodes), set(inst.rv_nodes)
    if len(sv) != len(inst.sv_nodes):
        out.append("sv_nodes: duplicate identifiers")
    if len(rv) != len(inst.rv_nodes):
        out.append("rv_nodes: duplicate identifiers")
    if not sv & rv:
        out.append("N_SV and N_RV are disjoint: no node can load or unload")
    if inst.horizon < 1:
        out.append(f"horizon T={inst.horizon} must be >= 1")
    if inst.max_duration < 0:
        out.append(f"max duration K={inst.max_duration} must be >= 0")
    for i, j in inst.sv_edges:
        if i not in sv or j not in sv:
            out.append(f"sv_edge ({i},{j}) references an unknown station")
    for i, j in inst.rv_edges:
        if i not in rv or j not in rv:
            out.append(f"rv_edge ({i},{j}) references an unknown RV node")
    for name in ("rv_capacity", "max_load", "fleet_size"):
        if getattr(inst, name) < 0:
            out.append(f"{name}={getattr(inst, name)} must be nonnegative")
    if inst.max_load > inst.rv_capacity * inst.fleet_size:
        out.append(
            f"max_load={inst.max_load} exceeds rv_capacity*fleet_size={inst.rv_capacity * inst.fleet_size}"
        )
    for i in inst.sv_nodes:
        cap = inst.station_capacity.get(i)
        if cap is None or cap < 0:
            out.append(f"station {i}: missing or negative capacity")
            continue
        d0 = inst.initial_fill.get(i, 0)
        if not 0 <= d0 <= cap:
            out.append(f"station {i}: initial fill {d0} outside [0, {cap}]")
    for i in inst.initial_fill:
        if i not in sv:
            out.append(f"initial_fill references unknown station {i}")
    edges = set(inst.rv_edges)
    total_rv = 0
    for (i, j), n in inst.initial_rv.items():
        total_rv += n
        if (i, j) not in edges:
            out.append(f"initial RV position ({i},{j}) is not an RV edge")
        if n < 0:
            out.append(f"initial RV count on ({i},{j}) is negative")
    if total_rv != inst.fleet_size:
        out.append(f"fleet count: initial RV positions sum to {total_rv}, fleet_size is {inst.fleet_size}")
    for (i, j), n in inst.initial_onboard.items():
        cap = inst.rv_capacity * inst.initial_rv.get((i, j), 0)
        if not 0 <= n <= cap:
            out.append(f"initial onboard on ({i},{j}) = {n} outside [0, {cap}]")
    for (i, t), r in inst.load_cost.items():
        if r < 0:
            out.append(f"load cost at ({i},{t}) is negative")
        if i not in sv or i not in rv:
            out.append(f"load cost at ({i},{t}) is outside N_SV ∩ N_RV")
    for (i, j, t), c in inst.rv_move_cost.items():
        if (i, j) not in edges or not 1 <= t <= inst.horizon:
            out.append(f"move cost key ({i},{j},{t}) is not an RV arc in the horizon")
    sv_edges = set(inst.sv_edges)
    K = inst.max_duration
    for (i, j, t, k), w in inst.in_progress.items():
        if (i, j) not in sv_edges:
            out.append(f"in-progress trip ({i},{j},{t},{k}) on unknown SV edge")
        if not (1 - K <= t <= 0 and -t < k <= K):
            out.append(f"in-progress trip ({i},{j},{t},{k}) outside 1-K <= t <= 0, -t < k <= K")
        if w < 0:
            out.append(f"in-progress trip ({i},{j},{t},{k}) has negative count")
    if inst.penalty < 0:
        out.append("penalty r_p must be nonnegative")
    return out


def check_plan(inst: NetworkInstance, plan: RebalancePlan, tol: float = 1e-6, integral: bool = False) -> list:
    """Violations of the first-stage constraints for ``plan``; empty means feasible."""
    out = []
    T = inst.horizon
    edges = set(inst.rv_edges)
    slots = set((i, t) for i in inst.action_nodes for t in range(1, T + 1))
    for (i, j, t), v in plan.z.items():
        if (i, j) not in edges or not 1 <= t <= T:
            out.append(f"z{(i, j, t)} is not an RV arc")
        if v < -tol:
            out.append(f"z{(i, j, t)} = {v} negative")
    for (i, j, t), v in plan.b.items():
        if (i, j) not in edges or not 1 <= t <= T:
            out.append(f"b{(i, j, t)} is not an RV arc")
        if v < -tol:
            out.append(f"b{(i, j, t)} = {v} negative")
        if v > inst.rv_capacity * plan.z.get((i, j, t), 0.0) + tol:
            out.append(f"b{(i, j, t)} = {v} exceeds capacity of z")
    for name, m in (("y_plus", plan.y_plus), ("y_minus", plan.y_minus)):
        for key, v in m.items():
            if key not in slots:
                out.append(f"{name}{key} outside the action slots")
            if v < -tol or v > inst.max_load + tol:
                out.append(f"{name}{key} = {v} outside [0, {inst.max_load}]")
    if integral:
        for name, m in (("z", plan.z), ("b", plan.b), ("y_plus", plan.y_plus), ("y_minus", plan.y_minus)):
            for key, v in m.items():
                if abs(v - round(v)) > tol:
                    out.append(f"{name}{key} = {v} is fractional")
    out_z, in_z, out_b, in_b = {}, {}, {}, {}
    for (i, j, t), v in plan.z.items():
        out_z[(i, t)] = out_z.get((i, t), 0.0) + v
        in_z[(j, t + 1)] = in_z.get((j, t + 1), 0.0) + v
    for (i, j, t), v in plan.b.items():
        out_b[(i, t)] = out_b.get((i, t), 0.0) + v
        in_b[(j, t + 1)] = in_b.get((j, t + 1), 0.0) + v
    for (i, j), v in inst.initial_rv.items():
        in_z[(j, 1)] = in_z.get((j, 1), 0.0) + v
    for (i, j), v in inst.initial_onboard.items():
        in_b[(j, 1)] = in_b.get((j, 1), 0.0) + v
    for t in range(1, T + 1):
        for i in inst.rv_nodes:
            lhs, rhs = out_z.get((i, t), 0.0), in_z.get((i, t), 0.0)
            if abs(lhs - rhs) > tol:
                out.append(f"RV conservation at ({i},{t}): out {lhs} != in {rhs}")
            lhs = out_b.get((i, t), 0.0)
            rhs = in_b.get((i, t), 0.0) + plan.y_plus.get((i, t), 0.0) - plan.y_minus.get((i, t), 0.0)
            if abs(lhs - rhs) > tol:
                out.append(f"onboard conservation at ({i},{t}): out {lhs} != in+load-unload {rhs}")
    return out


def no_action_plan(inst: NetworkInstance) -> RebalancePlan:
    """RVs finish their initial move and then idle on self-loops; y = 0."""
    loops = set((i, j) for i, j in inst.rv_edges if i == j)
    pos: dict = {}
    for (i, j), n in inst.initial_rv.items():
        pos[j] = pos.get(j, 0) + n
    onboard: dict = {}
    for (i, j), n in inst.initial_onboard.items():
        onboard[j] = onboard.get(j, 0) + n
    z, b = {}, {}
    for j, n in pos.items():
        if n and (j, j) not in loops:
            raise ValueError(f"node {j} has no self-loop, RVs cannot idle")
        for t in range(1, inst.horizon + 1):
            z[(j, j, t)] = n
            if onboard.get(j):
                b[(j, j, t)] = onboard[j]
    return RebalancePlan(z=z, b=b)


# ------------------------------------------------------------ serialization


def _records(mapping, sort_key=None):
    keys = sorted(mapping, key=sort_key)
    return [list(k) + [mapping[k]] for k in keys]


def instance_to_dict(inst: NetworkInstance, model=None) -> dict:
    doc = {
        "sv_nodes": list(inst.sv_nodes),
        "sv_edges": [list(e) for e in inst.sv_edges],
        "rv_nodes": list(inst.rv_nodes),
        "rv_edges": [list(e) for e in inst.rv_edges],
        "T": inst.horizon,
        "K": inst.max_duration,
        "capacities": {
            "station": [[i, inst.station_capacity[i]] for i in sorted(inst.station_capacity)],
            "rv": inst.rv_capacity,
            "max_load": inst.max_load,
        },
        "costs": {
            "rv_move": _records(inst.rv_move_cost, lambda k: (k[2], k[0], k[1])),
            "load": _records(inst.load_cost, lambda k: (k[1], k[0])),
            "penalty": inst.penalty,
        },
        "fleet": inst.fleet_size,
        "initial_state": {
            "fill": [[i, inst.initial_fill[i]] for i in sorted(inst.initial_fill)],
            "rv": _records(inst.initial_rv),
            "onboard": _records(inst.initial_onboard),
            "in_progress": _records(inst.in_progress, demand_sort_key),
        },
        "demand_rates": None,
    }
    if model is not None:
        doc["demand_rates"] = {
            "value_low": float(model.value_low),
            "value_high": float(model.value_high),
            "rates": [list(k) + [float(v)] for k, v in sorted(model.rates.items(), key=lambda kv: demand_sort_key(kv[0]))],
        }
    return doc


def instance_from_dict(doc: dict):
    """Inverse of :func:`instance_to_dict`; returns ``(instance, model_or_None)``."""
    from .scenarios import DemandModel

    caps, costs, init = doc["capacities"], doc["costs"], doc["initial_state"]
    inst = NetworkInstance(
        sv_nodes=doc["sv_nodes"],
        sv_edges=doc["sv_edges"],
        rv_nodes=doc["rv_nodes"],
        rv_edges=doc["rv_edges"],
        horizon=int(doc["T"]),
        max_duration=int(doc["K"]),
        station_capacity={int(i): int(c) for i, c in caps["station"]},
        rv_capacity=int(caps["rv"]),
        max_load=int(caps["max_load"]),
        fleet_size=int(doc["fleet"]),
        rv_move_cost={(int(i), int(j), int(t)): float(c) for i, j, t, c in costs.get("rv_move", [])},
        load_cost={(int(i), int(t)): float(r) for i, t, r in costs.get("load", [])},
        penalty=float(costs.get("penalty", 20.0)),
        initial_fill={int(i): int(d) for i, d in init.get("fill", [])},
        initial_rv={(int(i), int(j)): int(n) for i, j, n in init.get("rv", [])},
        initial_onboard={(int(i), int(j)): int(n) for i, j, n in init.get("onboard", [])},
        in_progress={tuple(int(x) for x in r[:4]): int(r[4]) for r in init.get("in_progress", [])},
    )
    model = None
    rates = doc.get("demand_rates")
    if rates is not None:
        model = DemandModel(
            {tuple(int(x) for x in r[:4]): float(r[4]) for r in rates["rates"]},
            float(rates["value_low"]),
            float(rates["value_high"]),
        )
    return inst, model


def dumps_instance(inst: NetworkInstance, model=None) -> str:
    return json.dumps(instance_to_dict(inst, model), indent=1, sort_keys=True) + "\n"


def loads_instance(text: str):
    return instance_from_dict(json.loads(text))


def save_instance(path, inst: NetworkInstance, model=None) -> None:
    with open(path, "w") as fh:
        fh.write(dumps_instance(inst, model))


def load_instance(path):
    with open(path) as fh:
        return loads_instance(fh.read())


def plan_to_rows(plan: RebalancePlan):
    """Two row lists for the plan CSVs: ``(t,i,j,z,b)`` and ``(t,i,y_plus,y_minus)``."""
    arcs = sorted(set(plan.z) | set(plan.b), key=lambda k: (k[2], k[0], k[1]))
    moves = [(t, i, j, plan.z.get((i, j, t), 0), plan.b.get((i, j, t), 0)) for i, j, t in arcs]
    slots = sorted(set(plan.y_plus) | set(plan.y_minus), key=lambda k: (k[1], k[0]))
    acts = [(t, i, plan.y_plus.get((i, t), 0), plan.y_minus.get((i, t), 0)) for i, t in slots]
    return moves, acts


def write_plan_csv(path_prefix, plan: RebalancePlan) -> None:
    import csv

    moves, acts = plan_to_rows(plan)
    with open(f"{path_prefix}_routes.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "j", "z", "b"])
        w.writerows(moves)
    with open(f"{path_prefix}_actions.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t", "i", "y_plus", "y_minus"])
        w.writerows(acts)


def read_plan_csv(path_prefix) -> RebalancePlan:
    import csv

    def num(s):
        v = float(s)
        return int(v) if v.is_integer() else v

    z, b, yp, ym = {}, {}, {}, {}
    with open(f"{path_prefix}_routes.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["i"]), int(row["j"]), int(row["t"]))
            z[key], b[key] = num(row["z"]), num(row["b"])
    with open(f"{path_prefix}_actions.csv", newline="") as fh:
        for row in csv.DictReader(fh):
            key = (int(row["i"]), int(row["t"]))
            yp[key], ym[key] = num(row["y_plus"]), num(row["y_minus"])
    return RebalancePlan(z, yp, ym, b)


def iter_keys(mapping: Mapping, order: Iterable):
    for key in order:
        if key in mapping:
            yield key, mapping[key]
