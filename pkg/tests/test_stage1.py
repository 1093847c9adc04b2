import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drrp.model import DemandScenario, check_plan
from drrp.scenarios import GridGenParams, expected_scenario, generate_grid_instance, linear_loss_model
from drrp.stage1 import (Stage1Solver, build_deterministic, build_stage1, extract_plan, half_horizon, model_counts,
                         plan_objective, plan_to_x, random_plan, solve_deterministic_drrp, solve_fixed_z_flow,
                         solve_stage1, unattended_actions, zero_vfa)
from drrp.vfa import ValueFunctionApprox

from conftest import line_instance, scenario


def random_vfa(instance, seed, spread=3.0):
    rng = np.random.default_rng(seed)
    base = zero_vfa(instance)
    rows = np.sort(rng.uniform(-spread, spread, size=base.slopes.shape), axis=1)
    return base.with_slopes(rows)


def random_routing(instance, seed):
    """Each RV walks along random RV edges."""
    rng = np.random.default_rng(seed)
    out = {}
    for i, j in instance.rv_edges:
        out.setdefault(i, []).append(j)
    z = {}
    for (_, start), count in instance.initial_rv.items():
        for _ in range(count):
            at = start
            for t in range(1, instance.T + 1):
                nxt = out[at][int(rng.integers(len(out[at])))]
                z[(at, nxt, t)] = z.get((at, nxt, t), 0) + 1
                at = nxt
    return z


@pytest.fixture(scope="module")
def small():
    return generate_grid_instance(GridGenParams(grid_side=2, n_rv=2, rng_seed=4))[0]


def test_zero_slopes_leave_rvs_idle(grid9):
    inst, _ = grid9
    res = solve_stage1(inst, zero_vfa(inst))
    assert res.objective == pytest.approx(0.0)
    assert not res.plan.y_plus and not res.plan.y_minus
    assert all(i == j for (i, j, _) in res.plan.z)
    assert check_plan(inst, res.plan, integral=True) == []


def test_load_at_one_node_unload_at_next():
    inst = line_instance(n_nodes=2, T=4, rv_capacity=2, max_load=2)
    vfa = zero_vfa(inst)
    rows = vfa.slopes.copy()
    rows[vfa.position((2, 2))] = -1.0
    res = solve_stage1(inst, vfa.with_slopes(rows), rel_gap=0.0)
    assert res.plan.y_plus == {(1, 1): 2}
    assert res.plan.y_minus == {(2, 2): 2}
    assert res.plan.z[(1, 2, 1)] == 1 and res.plan.b[(1, 2, 1)] == 2
    assert res.objective == pytest.approx(-2 + 4e-3 + 1e-3)


def test_table_counts_dense_epigraph():
    inst = generate_grid_instance(GridGenParams(grid_side=3, n_rv=2, rng_seed=0))[0]
    c = model_counts(build_stage1(inst, layout="dense", encoding="epigraph"))
    assert c["integer"] == 9 * 11 * 12
    inst = generate_grid_instance(GridGenParams(grid_side=4, n_rv=5, rng_seed=0))[0]
    c = model_counts(build_stage1(inst, layout="dense", encoding="epigraph"))
    assert (c["integer"], c["continuous"], c["constraints"]) == (3456, 3456, 7488)


def test_default_model_is_smaller(grid9):
    inst, _ = grid9
    dense = model_counts(build_stage1(inst, layout="dense", encoding="epigraph"))
    graph = model_counts(build_stage1(inst))
    assert graph["integer"] < dense["integer"]


@settings(max_examples=30)
@given(st.integers(0, 10_000))
def test_fixed_routing_gives_integral_loads(seed):
    inst = generate_grid_instance(GridGenParams(grid_side=2, n_rv=2, rng_seed=seed % 5))[0]
    vfa = random_vfa(inst, seed)
    z = random_routing(inst, seed)
    lp_res = Stage1Solver(inst, "fixed_z_flow", z_fixed=z).solve(vfa)
    assert np.allclose(lp_res.x, np.round(lp_res.x), atol=1e-6)
    plan, obj = solve_fixed_z_flow(inst, vfa, z)
    assert plan is not None
    assert lp_res.objective == pytest.approx(obj, abs=1e-6)
    assert plan_objective(inst, vfa, plan) == pytest.approx(obj, abs=1e-6)
    assert check_plan(inst, plan, integral=True) == []


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_mode_ordering(seed):
    inst = generate_grid_instance(GridGenParams(grid_side=2, n_rv=2, rng_seed=seed % 5))[0]
    vfa = random_vfa(inst, seed)
    obj = {m: solve_stage1(inst, vfa, mode=m, rel_gap=1e-9).objective
           for m in ("relaxed", "half_integer", "integer")}
    assert obj["relaxed"] <= obj["half_integer"] + 1e-6
    assert obj["half_integer"] <= obj["integer"] + 1e-6


@settings(max_examples=8)
@given(st.integers(0, 10_000))
def test_integer_plans_are_valid(seed):
    inst = generate_grid_instance(GridGenParams(grid_side=2, n_rv=2, rng_seed=seed % 5))[0]
    vfa = random_vfa(inst, seed)
    res = solve_stage1(inst, vfa, rel_gap=1e-9)
    plan = res.plan
    assert check_plan(inst, plan, integral=True) == []
    assert all(not (plan.y_plus.get(k, 0) > 0 and plan.y_minus.get(k, 0) > 0) for k in plan.y_plus)
    assert unattended_actions(inst, plan) == []
    assert res.objective == pytest.approx(plan_objective(inst, vfa, plan), abs=1e-9)


@settings(max_examples=5)
@given(st.integers(0, 10_000))
def test_native_matches_highs(seed):
    inst = generate_grid_instance(GridGenParams(grid_side=2, n_rv=2, rng_seed=seed % 5))[0]
    vfa = random_vfa(inst, seed)
    ours = solve_stage1(inst, vfa, rel_gap=1e-9)
    ref = solve_stage1(inst, vfa, rel_gap=1e-9, backend="highs")
    assert ours.objective == pytest.approx(ref.objective, abs=1e-6)


def test_encodings_agree(small):
    vfa = random_vfa(small, 3)
    seg = solve_stage1(small, vfa, rel_gap=1e-9)
    epi = solve_stage1(small, vfa, rel_gap=1e-9, encoding="epigraph", layout="dense", backend="highs")
    assert seg.objective == pytest.approx(epi.objective, abs=1e-6)


def test_half_integer_boundary():
    assert half_horizon(12) == 6 and half_horizon(5) == 3


def test_plan_columns_round_trip(small):
    vfa = random_vfa(small, 9)
    solver = Stage1Solver(small)
    res = solver.solve(vfa)
    x = plan_to_x(solver.model, res.plan)
    assert extract_plan(solver.model, x, True) == res.plan
    assert float(solver.lp_for(vfa).c @ x) == pytest.approx(res.objective, abs=1e-9)


def test_warm_start_repeats(small):
    solver = Stage1Solver(small)
    first = solver.solve(random_vfa(small, 1))
    again = solver.solve(random_vfa(small, 1))
    assert again.objective == pytest.approx(first.objective, abs=1e-9)


def test_empty_fleet():
    inst = line_instance(fleet=0, rv_capacity=2, max_load=0, rv_start={1: 0})
    res = solve_stage1(inst)
    assert res.objective == 0.0 and not res.plan.z and not res.plan.y_plus


def test_unknown_mode_rejected(small):
    with pytest.raises(ValueError):
        build_stage1(small, mode="fuzzy")


def test_random_plan_reproducible(small):
    assert random_plan(small, 3) == random_plan(small, 3)


# ------------------------------------------------------------ deterministic model


def test_rv_cannot_bring_a_far_bike_in_time():
    inst = line_instance(n_nodes=3, T=3, fleet=1, rv_start={2: 1}, fill={1: 1, 2: 0, 3: 0})
    xi = scenario({(3, 1, 2, 0): 1})
    for relax in (False, True):
        res = solve_deterministic_drrp(inst, xi, rel_gap=0.0, relax=relax)
        assert res.served == {}
        assert res.objective == pytest.approx(1.0)


def test_rv_carries_a_bike_one_hop():
    inst = line_instance(n_nodes=3, T=3, fleet=1, rv_start={2: 1}, fill={1: 0, 2: 1, 3: 0})
    xi = scenario({(3, 1, 2, 0): 1})
    res = solve_deterministic_drrp(inst, xi, rel_gap=0.0)
    assert res.served == {(3, 1, 2, 0): 1.0}
    assert res.objective == pytest.approx(2 * 1e-3 + 1e-3)


def test_zero_demand_needs_no_action(grid4):
    inst, _ = grid4
    res = solve_deterministic_drrp(inst, DemandScenario.empty(), rel_gap=0.0)
    assert res.objective == pytest.approx(0.0)
    assert not res.plan.y_plus and not res.plan.y_minus


def test_deterministic_relaxation_bounds_mip(grid4):
    inst, model = grid4
    xi = expected_scenario(linear_loss_model(model))
    mip = solve_deterministic_drrp(inst, xi, rel_gap=1e-9)
    lp = solve_deterministic_drrp(inst, xi, relax=True)
    assert lp.objective <= mip.objective + 1e-6
    ref = solve_deterministic_drrp(inst, xi, rel_gap=1e-9, backend="highs")
    assert mip.objective == pytest.approx(ref.objective, abs=1e-6)
    assert len(build_deterministic(inst, xi).w_cols) == len(xi.demand)


def test_vfa_rows_are_admissible(small):
    vfa = random_vfa(small, 0)
    assert isinstance(vfa, ValueFunctionApprox) and vfa.is_admissible()
