import csv
import json

import numpy as np
import pytest

from drrp.bench import SuiteConfig, improvement_table, load_suite_config, lp_gap_study, relative_gap, run_suite
from drrp.cli import main
from drrp.evaluation import evaluate_plan, evaluation_scenarios
from drrp.model import RebalancePlan, write_plan_csv
from drrp.scenarios import DemandModel, GridGenParams

from conftest import line_instance


def header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


def test_evaluating_without_demand_serves_everyone():
    inst = line_instance()
    ev = evaluate_plan(inst, DemandModel({}), RebalancePlan(), n_eval=3)
    assert ev.rate_mean == 1.0 and ev.cost_mean == 0.0 and ev.n_eval == 3


def test_evaluation_is_deterministic_and_paired(grid4):
    inst, model = grid4
    a = evaluate_plan(inst, model, RebalancePlan(), n_eval=10, seed=5)
    b = evaluate_plan(inst, model, RebalancePlan(), n_eval=10, seed=5,
                      scenarios=evaluation_scenarios(inst, model, 10, 5))
    assert np.array_equal(a.costs, b.costs) and np.array_equal(a.rates, b.rates)
    assert a.objective_mean == pytest.approx(a.cost_mean)


def test_relative_gap():
    assert relative_gap(10.0, 10.0) == 0.0
    assert relative_gap(0.0, 0.0) == 0.0
    assert relative_gap(10.0, 7.5) == pytest.approx(0.25)


def test_gap_study_row(tmp_path):
    rows = lp_gap_study(sizes=(4,), fleets=(1,), n_instances=1, time_limit=120)
    (row,) = rows
    assert row.nodes == 4 and row.fleet == 1
    assert -1e-9 <= row.gap <= 1.0
    assert row.lp_objective <= row.mip_objective + 1e-9
    assert 0.0 <= row.na_rate <= row.opt_rate + 1e-9
    with pytest.raises(ValueError):
        lp_gap_study(sizes=(5,), n_instances=1)


def test_no_action_suite_writes_tables(tmp_path):
    cfg = SuiteConfig(grid_sides=(2,), instances=2, methods=("NA", "M3"), iterations=2, n_eval=3,
                      out_dir=str(tmp_path / "out"))
    res = run_suite(cfg)
    out = tmp_path / "out"
    assert res["failures"] == [] and len(res["rows"]) == 4
    assert header(out / "runs.csv")[:6] == ["nodes", "fleet", "instance", "method", "rate_mean", "rate_sd"]
    assert header(out / "service_rates.csv") == ["nodes", "fleet", "method", "instances", "delta_mean", "delta_sd",
                                                  "positive"]
    assert header(out / "costs.csv") == header(out / "service_rates.csv")
    assert header(out / "timings.csv") == ["nodes", "fleet", "method", "instances", "seconds_mean",
                                           "final_seconds_mean", "stage1_seconds_mean", "timed_out"]
    assert json.loads((out / "manifest.json").read_text())["cells"] == 4
    assert (out / "cells" / "n4_v1_i0_M3" / "theta.csv").exists()


def test_improvement_table_pairs_by_instance():
    rows = [{"nodes": 9, "fleet": 1, "instance": k, "method": m, "rate": r}
            for k, (a, b) in enumerate([(0.7, 0.75), (0.8, 0.78)]) for m, r in (("NA", a), ("M2I", b))]
    (out,) = improvement_table(rows, "rate", scale=100.0)
    assert out["delta_mean"] == pytest.approx(1.5) and out["positive"] == 1


def test_suite_config_parsing(tmp_path):
    path = tmp_path / "s.toml"
    path.write_text('[grid]\nsides = [2]\ninstances = 1\ncluster_spread = "std"\n[methods]\nlist = ["NA"]\n')
    cfg = load_suite_config(path)
    assert cfg.grid == {"cluster_spread": "std"} and cfg.methods == ("NA",)
    path.write_text("[grid]\nwarp = 9\n")
    with pytest.raises(ValueError):
        load_suite_config(path)


# ------------------------------------------------------------ CLI


@pytest.fixture(scope="module")
def instance_file(tmp_path_factory):
    out = tmp_path_factory.mktemp("inst")
    assert main(["generate", "--grid-side", "2", "--seed", "3", "--out-dir", str(out)]) == 0
    return out / "grid_n4_v1_s3.json"


def test_cli_run_and_evaluate(instance_file, tmp_path, capsys):
    assert main(["run", "--instance", str(instance_file), "--iters", "2", "--out-dir", str(tmp_path),
                 "--eval-scenarios", "3"]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["iterations"] == 2
    assert main(["evaluate", "--instance", str(instance_file), "--plan", str(tmp_path / "plan"),
                 "--eval-scenarios", "3"]) == 0
    assert main(["evaluate", "--instance", str(instance_file), "--eval-scenarios", "3"]) == 0


def test_cli_rejects_bad_input(instance_file, tmp_path):
    with pytest.raises(SystemExit) as exc:
        main(["fly"])
    assert exc.value.code == 1
    assert main(["run", "--instance", str(tmp_path / "missing.json")]) == 1
    assert main(["suite"]) == 1
    write_plan_csv(tmp_path / "bad", RebalancePlan(y_plus={(0, 1): 99}))
    assert main(["evaluate", "--instance", str(instance_file), "--plan", str(tmp_path / "bad")]) == 1


def test_cli_suite(tmp_path):
    cfg = tmp_path / "s.toml"
    cfg.write_text(f'[grid]\nsides = [2]\ninstances = 1\n[methods]\nlist = ["NA"]\n[eval]\nscenarios = 2\n'
                   f'[output]\ndir = "{tmp_path / "res"}"\n')
    assert main(["suite", "--config", str(cfg)]) == 0
    assert (tmp_path / "res" / "runs.csv").exists()


def test_cli_ingest(instance_file, tmp_path):
    trips = tmp_path / "trips.csv"
    trips.write_text("start_station,end_station,start_time,duration_seconds\n"
                     "0,1,2024-03-01T00:10:00,300\n1,3,2024-03-01T00:40:00,900\n")
    assert main(["ingest", "--trips", str(trips), "--instance", str(instance_file), "--out-dir", str(tmp_path)]) == 0
    assert (tmp_path / "ingested.json").exists()
    trips.write_text("start_station,end_station,start_time,duration_seconds\n7,1,2024-03-01T00:10:00,300\n")
    assert main(["ingest", "--trips", str(trips), "--instance", str(instance_file), "--out-dir", str(tmp_path)]) == 2


def test_grid_params_defaults():
    p = GridGenParams()
    assert p.horizon == 12 and p.fleet == 45 and p.n_stations == 9
