import sys

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from drrp.model import DemandScenario, NetworkInstance
from drrp.scenarios import GridGenParams, generate_grid_instance

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def line_instance(n_nodes=3, T=4, fleet=1, rv_capacity=2, max_load=2, station_capacity=3, fill=None,
                  rv_start=None, load_cost=1e-3, move_cost=1e-3, K=2):
    """Stations on a line; RVs move to neighbours or idle."""
    nodes = list(range(1, n_nodes + 1))
    edges = [(i, i) for i in nodes] + [(i, i + 1) for i in nodes[:-1]] + [(i + 1, i) for i in nodes[:-1]]
    start = rv_start or {nodes[0]: fleet}
    return NetworkInstance(
        sv_nodes=nodes, sv_edges=[(i, j) for i in nodes for j in nodes], rv_nodes=nodes, rv_edges=edges,
        horizon=T, max_duration=K, station_capacity={i: station_capacity for i in nodes},
        rv_capacity=rv_capacity, max_load=max_load, fleet_size=fleet,
        initial_fill=fill if fill is not None else {i: 1 for i in nodes},
        initial_rv={(i, i): c for i, c in start.items()},
        rv_move_cost={(i, j, t): move_cost for i, j in edges if i != j for t in range(1, T + 1)},
        load_cost={(i, t): load_cost for i in nodes for t in range(1, T + 1)})


def scenario(demand: dict, value: float = 1.0) -> DemandScenario:
    return DemandScenario(demand, {k: np.full(v, value) for k, v in demand.items()})


@pytest.fixture(scope="session")
def grid9():
    return generate_grid_instance(GridGenParams(rng_seed=0))


@pytest.fixture(scope="session")
def grid4():
    return generate_grid_instance(GridGenParams(grid_side=2, rng_seed=0))


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    results = getattr(module, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        passed, detail = results[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}")
