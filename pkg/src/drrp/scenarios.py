"""Demand models, scenario sampling, clustered grid benchmarks and trip-log ingestion."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from datetime import datetime
from typing import Mapping

import numpy as np

from .model import MICRO, DemandScenario, FrozenMap, NetworkInstance, demand_sort_key

# Named purposes for counter-based streams.  Each stream is a Philox generator
# keyed by (seed, purpose, index), so scenario n of a run is the same draw no
# matter which method consumes it.
STREAMS = {"instance": 1, "scenario": 2, "m3": 3, "eval": 4, "synthetic": 5, "misc": 6}


def stream(seed: int, purpose: str, index: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(STREAMS[purpose], int(index)))
    return np.random.Generator(np.random.Philox(ss))


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return stream(int(seed), "misc")


@dataclass(frozen=True)
class DemandModel:
    """Expected journeys per tuple plus the journey-value range."""

    rates: Mapping
    value_low: float = 0.5
    value_high: float = 1.5

    def __post_init__(self):
        items = []
        for k, v in self.rates.items():
            v = float(v)
            if not math.isfinite(v) or v < 0:
                raise ValueError(f"rate for {k} must be finite and nonnegative, got {v}")
            if v > 0:
                items.append((tuple(int(x) for x in k), v))
        items.sort(key=lambda kv: demand_sort_key(kv[0]))
        object.__setattr__(self, "rates", FrozenMap(items))
        if not 0 <= self.value_low <= self.value_high:
            raise ValueError("need 0 <= value_low <= value_high")

    @property
    def keys(self) -> tuple:
        return tuple(self.rates)

    def total_rate(self) -> float:
        return float(sum(self.rates.values()))


def _quantize(values: np.ndarray) -> np.ndarray:
    return np.round(values * MICRO) / MICRO


def sample_scenario(model: DemandModel, seed) -> DemandScenario:
    """Poisson counts per tuple and sorted uniform journey values."""
    rng = _rng(seed)
    keys = model.keys
    if not keys:
        return DemandScenario.empty()
    lam = np.fromiter(model.rates.values(), dtype=float, count=len(keys))
    counts = rng.poisson(lam)
    values = _quantize(rng.uniform(model.value_low, model.value_high, size=int(counts.sum())))
    demand, slopes, pos = {}, {}, 0
    for key, f in zip(keys, counts):
        if f:
            demand[key] = int(f)
            slopes[key] = np.sort(values[pos:pos + f])
            pos += f
    return DemandScenario(demand, slopes)


def expected_scenario(model: DemandModel) -> DemandScenario:
    """Round-half-to-even counts, each journey valued at the mid value."""
    mid = _quantize(np.array([(model.value_low + model.value_high) / 2.0]))[0]
    demand, slopes = {}, {}
    for key, lam in model.rates.items():
        f = int(np.round(lam))
        if f:
            demand[key] = f
            slopes[key] = np.full(f, mid)
    return DemandScenario(demand, slopes)


def linear_loss_model(model: DemandModel) -> DemandModel:
    """Same rates, every journey worth exactly one unit (l(x) = x)."""
    return DemandModel(model.rates, 1.0, 1.0)


# ------------------------------------------------------------- grid benchmarks


@dataclass(frozen=True)
class GridGenParams:
    grid_side: int = 3
    origin_clusters: int = 3
    dest_clusters: int = 5
    brackets: int = 6
    bracket_len: int = 2
    sv_per_station: int = 5
    sv_speed: float | None = None  # distance per step; default 125/sqrt(|N_SV|)
    step_minutes: float = 15.0
    trip_mean_frac: float = 0.15
    trip_sd_frac: float = 0.075
    max_duration: int = 2
    n_rv: int = 1
    station_capacity: int = 10
    rv_capacity: int = 5
    max_load: int = 10
    move_cost: float = 1e-3
    load_cost: float = 1e-3
    penalty: float = 20.0
    value_low: float = 0.5
    value_high: float = 1.5
    area: float = 100.0
    cluster_spread: str = "covariance"
    rng_seed: int = 0

    @property
    def horizon(self) -> int:
        return self.brackets * self.bracket_len

    @property
    def n_stations(self) -> int:
        return self.grid_side ** 2

    @property
    def fleet(self) -> int:
        return self.sv_per_station * self.n_stations

    @property
    def speed(self) -> float:
        return self.sv_speed if self.sv_speed is not None else 125.0 / math.sqrt(self.n_stations)


SPREADS = ("covariance", "std")


@dataclass(frozen=True)
class Cluster:
    centroid: tuple
    variance: float


def grid_coordinates(side: int, area: float = 100.0) -> np.ndarray:
    """Cell-centre coordinates, node id = row * side + col."""
    step = area / side
    rr, cc = np.divmod(np.arange(side * side), side)
    return np.column_stack([(cc + 0.5) * step, (rr + 0.5) * step])


def map_to_grid(points: np.ndarray, coords: np.ndarray) -> np.ndarray:
    """Nearest node per point; equidistant ties go to the lowest node index."""
    d2 = ((points[:, None, :] - coords[None, :, :]) ** 2).sum(axis=2)
    return np.argmin(d2, axis=1)


def trip_duration(dist: np.ndarray, speed: float, K: int) -> np.ndarray:
    return np.minimum(np.maximum(0, np.ceil(dist / speed)), K).astype(int)


def random_trip_count(rng: np.random.Generator, mean: float, sd: float) -> int:
    """Rounded normal draw, redrawn while negative."""
    while True:
        n = int(np.round(rng.normal(mean, sd)))
        if n >= 0:
            return n


def random_clusters(rng: np.random.Generator, count: int, area: float = 100.0, spread: str = "covariance") -> list:
    """``spread="covariance"`` uses ``RandInt(1,4) * area / count`` as the variance, ``"std"`` as the std-dev."""
    if spread not in SPREADS:
        raise ValueError(f"cluster spread must be one of {SPREADS}")
    out = []
    for _ in range(count):
        c = rng.uniform(0.0, area, size=2)
        var = int(rng.integers(1, 5)) * (area / count)
        if spread == "std":
            var = var ** 2
        out.append(Cluster((float(c[0]), float(c[1])), float(var)))
    return out


def trips_from_clusters(rng, coords, origins, dests, n_trips, speed, K):
    """Sample ``n_trips`` journeys; returns arrays (i, j, k)."""
    if n_trips == 0:
        return np.zeros(0, int), np.zeros(0, int), np.zeros(0, int)
    oc = rng.integers(0, len(origins), size=n_trips)
    dc = rng.integers(0, len(dests), size=n_trips)
    start = np.array([origins[c].centroid for c in oc]) + rng.standard_normal((n_trips, 2)) * np.sqrt(
        [[origins[c].variance] for c in oc])
    end = np.array([dests[c].centroid for c in dc]) + rng.standard_normal((n_trips, 2)) * np.sqrt(
        [[dests[c].variance] for c in dc])
    i = map_to_grid(start, coords)
    j = map_to_grid(end, coords)
    k = trip_duration(np.linalg.norm(end - start, axis=1), speed, K)
    return i, j, k


def grid_rv_edges(side: int) -> list:
    edges = []
    for n in range(side * side):
        r, c = divmod(n, side)
        edges.append((n, n))
        for dr, dc in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            rr, cc = r + dr, c + dc
            if 0 <= rr < side and 0 <= cc < side:
                edges.append((n, rr * side + cc))
    return sorted(edges)


def grid_network(params: GridGenParams, rv_start: dict) -> NetworkInstance:
    side, T = params.grid_side, params.horizon
    nodes = list(range(side * side))
    rv_edges = grid_rv_edges(side)
    max_load = min(params.max_load, params.rv_capacity * params.n_rv)
    return NetworkInstance(
        sv_nodes=nodes,
        sv_edges=[(i, j) for i in nodes for j in nodes],
        rv_nodes=nodes,
        rv_edges=rv_edges,
        horizon=T,
        max_duration=params.max_duration,
        station_capacity={i: params.station_capacity for i in nodes},
        rv_capacity=params.rv_capacity,
        max_load=max_load,
        fleet_size=params.n_rv,
        rv_move_cost={(i, j, t): params.move_cost for (i, j) in rv_edges if i != j for t in range(1, T + 1)},
        load_cost={(i, t): params.load_cost for i in nodes for t in range(1, T + 1)},
        penalty=params.penalty,
        initial_fill={i: params.station_capacity // 2 for i in nodes},
        initial_rv={(n, n): c for n, c in sorted(rv_start.items())},
    )


def generate_grid_instance(params: GridGenParams):
    """Clustered-demand grid benchmark; returns ``(instance, DemandModel)``."""
    if params.grid_side < 2:
        raise ValueError("grid_side must be at least 2")
    if params.origin_clusters < 1 or params.dest_clusters < 1:
        raise ValueError("need at least one origin and one destination cluster")
    rng = stream(params.rng_seed, "instance")
    coords = grid_coordinates(params.grid_side, params.area)
    N = params.fleet
    rates: dict = {}
    t = 0
    for _ in range(params.brackets):
        origins = random_clusters(rng, params.origin_clusters, params.area, params.cluster_spread)
        dests = random_clusters(rng, params.dest_clusters, params.area, params.cluster_spread)
        for _ in range(params.bracket_len):
            t += 1
            n = random_trip_count(rng, params.trip_mean_frac * N, params.trip_sd_frac * N)
            ii, jj, kk = trips_from_clusters(rng, coords, origins, dests, n, params.speed, params.max_duration)
            for i, j, k in zip(ii.tolist(), jj.tolist(), kk.tolist()):
                rates[(i, j, t, k)] = rates.get((i, j, t, k), 0.0) + 1.0
    starts = rng.integers(0, params.n_stations, size=params.n_rv)
    rv_start: dict = {}
    for s in starts.tolist():
        rv_start[s] = rv_start.get(s, 0) + 1
    inst = grid_network(params, rv_start)
    return inst, DemandModel(rates, params.value_low, params.value_high)


# ------------------------------------------------------------------ ingestion


@dataclass
class IngestReport:
    rows: int = 0
    used: int = 0
    unknown_station: int = 0
    malformed: int = 0
    outside_window: int = 0
    days: int = 0
    notes: list = field(default_factory=list)


def ingest_trip_history(source, station_table: Mapping, T: int, K: int, step_minutes: float,
                        window_start: str = "00:00", n_days: int | None = None,
                        value_low: float = 0.5, value_high: float = 1.5):
    """Bin a trip log into per-step rates.

    ``source`` is a path or a text stream with columns ``start_station,
    end_station, start_time, duration_seconds``.  ``start_time`` is an ISO
    timestamp; the step index counts ``step_minutes`` buckets from
    ``window_start`` (``HH:MM``) on each day.  Counts are divided by the number
    of distinct dates seen (or ``n_days``).  Returns ``(DemandModel, IngestReport)``.
    """
    if isinstance(source, (str, bytes)) and not isinstance(source, io.IOBase):
        with open(source, newline="") as fh:
            return ingest_trip_history(fh, station_table, T, K, step_minutes, window_start, n_days,
                                       value_low, value_high)
    h, m = (int(x) for x in window_start.split(":"))
    start_min = 60 * h + m
    known = {int(s) for s in station_table}
    rep = IngestReport()
    counts: dict = {}
    dates = set()
    reader = csv.DictReader(source)
    for row in reader:
        rep.rows += 1
        try:
            i = int(row["start_station"])
            j = int(row["end_station"])
            when = datetime.fromisoformat(row["start_time"].strip())
            dur = float(row["duration_seconds"])
            if not math.isfinite(dur) or dur < 0:
                raise ValueError("bad duration")
        except (KeyError, TypeError, ValueError, AttributeError):
            rep.malformed += 1
            continue
        if i not in known or j not in known:
            rep.unknown_station += 1
            continue
        dates.add(when.date())
        minute = when.hour * 60 + when.minute + when.second / 60.0 - start_min
        t = int(math.floor(minute / step_minutes)) + 1
        if not 1 <= t <= T:
            rep.outside_window += 1
            continue
        k = min(int(math.ceil(dur / (60.0 * step_minutes))), K)
        counts[(i, j, t, k)] = counts.get((i, j, t, k), 0) + 1
        rep.used += 1
    rep.days = int(n_days) if n_days is not None else len(dates)
    denom = max(rep.days, 1)
    rates = {key: c / denom for key, c in counts.items()}
    return DemandModel(rates, value_low, value_high), rep
