import numpy as np
import pytest

from drrp.model import check_plan
from drrp.scenarios import DemandModel, sample_scenario, stream
from drrp.spar import ITERATE_MODE, SparConfig, cumulative_duals, run, spar_update
from drrp.stage1 import random_plan, zero_vfa
from drrp.stage2 import solve_stage2
from drrp.vfa import StepSizeRule


def test_no_action_baseline(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("NA"))
    assert not rep.plan.z and not rep.plan.y_plus and not rep.plan.y_minus
    assert rep.history == []


def test_zero_demand_keeps_slopes_at_zero(grid4):
    inst, _ = grid4
    rep = run(inst, DemandModel({}), SparConfig("M2I", n_max=4, snapshot_every=1))
    assert len(rep.snapshots) == 4
    assert all(np.all(v.slopes == 0) for _, v in rep.snapshots)
    assert not rep.plan.y_plus and not rep.plan.y_minus


def test_zero_wall_time_runs_one_iteration(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M2I", wall_time=0.0))
    assert len(rep.history) == 1 and rep.stopped_early


def test_custom_stop_predicate(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M2R", n_max=10), stop=lambda r: len(r.history) >= 3)
    assert len(rep.history) == 3


@pytest.mark.parametrize("method", ["M2I", "M2HI", "M2R", "M3"])
def test_truncated_runs_give_feasible_integer_plans(grid4, method):
    inst, model = grid4
    rep = run(inst, model, SparConfig(method, n_max=3, snapshot_every=1))
    assert len(rep.history) == 3
    if method != "M3":
        assert check_plan(inst, rep.plan, integral=True) == []
    assert rep.plan.is_integral()
    for _, vfa in rep.snapshots:
        assert vfa.is_admissible()
    assert all(0.0 <= r.service_rate <= 1.0 for r in rep.history)


def test_reruns_are_identical(grid4):
    inst, model = grid4
    a = run(inst, model, SparConfig("M2I", n_max=5, seed=3))
    b = run(inst, model, SparConfig("M2I", n_max=5, seed=3))
    assert a.vfa.slopes.tobytes() == b.vfa.slopes.tobytes()
    assert a.plan == b.plan
    assert [r.stage2_cost for r in a.history] == [r.stage2_cost for r in b.history]
    c = run(inst, model, SparConfig("M2I", n_max=5, seed=4))
    assert [r.stage2_cost for r in a.history] != [r.stage2_cost for r in c.history]


def test_scenario_stream_is_paired_across_methods(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M3", n_max=4, seed=2))
    for r in rep.history:
        xi = sample_scenario(model, stream(2, "scenario", r.n))
        plan = random_plan(inst, stream(2, "m3", r.n))
        assert r.stage2_cost == solve_stage2(inst, xi, plan).cost


def test_step_sizes_follow_rule(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M2R", n_max=3, step_rule=StepSizeRule("capped_harmonic")))
    assert [r.alpha for r in rep.history] == [1.0, 1.0, 1.0]


@pytest.mark.parametrize("gradient", ["local", "cumulative", "marginal"])
@pytest.mark.parametrize("update", ["smoothing", "literal"])
def test_update_options_run(grid4, gradient, update):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M2R", n_max=2, gradient=gradient, update=update))
    assert rep.vfa.is_admissible()


def test_checkpoints_are_evaluated(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M2R", n_max=3, checkpoints=(2,), checkpoint_eval=5))
    assert set(rep.checkpoints) == {2}
    assert rep.checkpoints[2].n_eval == 5


def test_final_integer_solve_after_relaxed_iterates(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M2R", n_max=3))
    assert np.isfinite(rep.final_objective)
    assert check_plan(inst, rep.plan, integral=True) == []


def test_monolithic_baseline(grid4):
    inst, model = grid4
    rep = run(inst, model, SparConfig("M1"))
    assert rep.vfa is None and rep.history == []
    assert check_plan(inst, rep.plan, integral=True) == []


def test_cumulative_duals_are_suffix_sums():
    duals = {(1, 1): (1.0, 0.0), (1, 2): (0.0, 2.0), (1, 3): (0.5, 0.0)}
    out = cumulative_duals(duals, 3)
    assert out[(1, 1)] == (1.5, 2.0) and out[(1, 3)] == (0.5, 0.0)


def test_update_keeps_admissibility(grid4):
    inst, model = grid4
    vfa = zero_vfa(inst)
    plan = random_plan(inst, 0)
    sol = solve_stage2(inst, sample_scenario(model, 0), plan)
    for n in range(1, 6):
        vfa = spar_update(vfa, plan, sol.duals, StepSizeRule()(n), inst.T, "literal", "local")
        assert vfa.is_admissible()


def test_config_validation():
    with pytest.raises(ValueError):
        SparConfig("M9")
    with pytest.raises(ValueError):
        SparConfig(n_max=0)
    assert SparConfig("M3").iterations == 200 and SparConfig().iterations == 50
    assert set(ITERATE_MODE) == {"M2I", "M2HI", "M2R"}
