import io

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from drrp.scenarios import (DemandModel, GridGenParams, expected_scenario, generate_grid_instance, grid_coordinates,
                            ingest_trip_history, linear_loss_model, map_to_grid, random_clusters, sample_scenario, stream,
                            trip_duration)
from drrp.stage1 import random_plan


def test_streams_are_independent_and_reproducible():
    a = stream(7, "scenario", 3).random(5)
    assert np.array_equal(a, stream(7, "scenario", 3).random(5))
    assert not np.array_equal(a, stream(7, "scenario", 4).random(5))
    assert not np.array_equal(a, stream(7, "eval", 3).random(5))


def test_generator_is_deterministic():
    p = GridGenParams(rng_seed=11)
    inst1, m1 = generate_grid_instance(p)
    inst2, m2 = generate_grid_instance(p)
    assert inst1 == inst2 and dict(m1.rates) == dict(m2.rates)
    inst3, _ = generate_grid_instance(GridGenParams(rng_seed=12))
    assert inst3 != inst1


def test_generator_shapes():
    inst, model = generate_grid_instance(GridGenParams(grid_side=4, n_rv=5, rng_seed=3))
    assert len(inst.sv_nodes) == 16 and inst.T == 12 and inst.K == 2
    assert sum(inst.initial_rv.values()) == 5
    assert inst.max_load == 10
    assert all(1 <= t <= 12 and 0 <= k <= 2 for (_, _, t, k) in model.keys)
    # interior node has four neighbours plus the idle loop
    assert sum(1 for (i, _) in inst.rv_edges if i == 5) == 5


def test_single_rv_caps_max_load():
    inst, _ = generate_grid_instance(GridGenParams(rng_seed=0))
    assert inst.max_load == 5


def test_trip_volume_matches_fleet_fraction():
    totals = [generate_grid_instance(GridGenParams(rng_seed=s))[1].total_rate() for s in range(20)]
    # 12 steps of N(0.15*45, 0.075*45) trips
    assert abs(np.mean(totals) - 12 * 0.15 * 45) < 8


def test_cluster_spread_knob():
    var = [c.variance for c in random_clusters(stream(0, "misc"), 200, 100.0, "covariance")]
    sd = [c.variance for c in random_clusters(stream(0, "misc"), 200, 100.0, "std")]
    assert set(np.round(np.array(var) * 2, 9)) <= {1.0, 2.0, 3.0, 4.0}
    assert np.allclose(sd, np.square(var))
    with pytest.raises(ValueError):
        random_clusters(stream(0, "misc"), 1, spread="radius")


def test_map_to_grid_ties_go_low():
    coords = grid_coordinates(2, 100.0)
    assert map_to_grid(np.array([[50.0, 50.0]]), coords).tolist() == [0]
    assert map_to_grid(np.array([[90.0, 10.0]]), coords).tolist() == [1]


def test_trip_duration_clamps():
    assert trip_duration(np.array([0.0, 1.0, 40.0, 500.0]), 41.0, 2).tolist() == [0, 1, 1, 2]


def test_sampled_scenario_is_sorted_and_quantized():
    model = DemandModel({(0, 1, 1, 0): 3.0, (1, 0, 2, 1): 5.0})
    sc = sample_scenario(model, stream(1, "scenario"))
    for key, vals in sc.value_slopes.items():
        assert len(vals) == sc.demand[key]
        assert np.all(np.diff(vals) >= 0)
        assert np.allclose(vals * 1e6, np.round(vals * 1e6))
        assert np.all((vals >= 0.5) & (vals <= 1.5))


def test_poisson_counts_match_rate():
    model = DemandModel({(0, 1, 1, 0): 4.0})
    counts = [sample_scenario(model, stream(s, "scenario")).demand.get((0, 1, 1, 0), 0) for s in range(2000)]
    assert abs(np.mean(counts) - 4.0) < 0.2
    assert abs(np.var(counts) - 4.0) < 0.5


def test_expected_scenario_rounds_half_even():
    model = DemandModel({(0, 1, 1, 0): 2.5, (0, 1, 2, 0): 3.5, (0, 1, 3, 0): 0.4})
    sc = expected_scenario(model)
    assert sc.demand == {(0, 1, 1, 0): 2, (0, 1, 2, 0): 4}
    assert all(np.all(v == 1.0) for v in sc.value_slopes.values())


def test_linear_loss_model():
    model = linear_loss_model(DemandModel({(0, 1, 1, 0): 2.0}))
    sc = sample_scenario(model, 0)
    assert all(np.all(v == 1.0) for v in sc.value_slopes.values())


def test_demand_model_rejects_negative_rates():
    with pytest.raises(ValueError):
        DemandModel({(0, 1, 1, 0): -1.0})


@given(st.integers(0, 10_000))
def test_random_plan_within_bounds(seed):
    inst, _ = generate_grid_instance(GridGenParams(grid_side=2, rng_seed=0))
    plan = random_plan(inst, seed)
    for key in set(plan.y_plus) | set(plan.y_minus):
        assert not (plan.y_plus.get(key) and plan.y_minus.get(key))
        assert abs(plan.net(*key)) <= inst.max_load


def test_random_plan_is_uniform():
    inst, _ = generate_grid_instance(GridGenParams(rng_seed=0))
    ybar = inst.max_load
    counts = np.zeros(2 * ybar + 1)
    for n in range(60):
        plan = random_plan(inst, stream(5, "m3", n))
        for i in inst.action_nodes:
            for t in range(1, inst.T + 1):
                counts[int(plan.net(i, t)) + ybar] += 1
    _, p = stats.chisquare(counts)
    assert p > 1e-3


def test_ingest_bins_trips():
    log = io.StringIO(
        "start_station,end_station,start_time,duration_seconds\n"
        "1,2,2024-01-01T08:05:00,600\n"
        "1,2,2024-01-02T08:10:00,1900\n"
        "2,1,2024-01-02T08:20:00,60\n"
        "9,1,2024-01-02T08:20:00,60\n"
        "1,2,2024-01-02T12:00:00,60\n"
        "1,2,not-a-time,60\n")
    model, rep = ingest_trip_history(log, {1: None, 2: None}, T=4, K=2, step_minutes=15, window_start="08:00")
    assert (rep.rows, rep.used, rep.unknown_station, rep.malformed, rep.outside_window, rep.days) == (6, 3, 1, 1, 1, 2)
    assert dict(model.rates) == {(1, 2, 1, 1): 0.5, (2, 1, 2, 1): 0.5, (1, 2, 1, 2): 0.5}

