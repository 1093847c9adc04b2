import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import linprog

from drrp.flow import (FlowProblem, certificate_violations, extract_bound_duals, flow_lp, read_dimacs,
                       reduced_costs, residual_distances, solve_flow, write_dimacs)
from drrp.lp import solve_lp


@st.composite
def flow_problems(draw, max_nodes=7, negative=True):
    n = draw(st.integers(2, max_nodes))
    m = draw(st.integers(1, 3 * n))
    tail = draw(st.lists(st.integers(0, n - 1), min_size=m, max_size=m))
    head = draw(st.lists(st.integers(0, n - 1), min_size=m, max_size=m))
    cap = draw(st.lists(st.integers(0, 6), min_size=m, max_size=m))
    lo = -5 if negative else 0
    cost = draw(st.lists(st.integers(lo, 9), min_size=m, max_size=m))
    raw = draw(st.lists(st.integers(-4, 4), min_size=n - 1, max_size=n - 1))
    supply = raw + [-sum(raw)]
    return FlowProblem(n, np.array(supply), np.array(tail), np.array(head), np.array(cap), np.array(cost))


def highs_flow(problem):
    A = np.zeros((problem.n_nodes, problem.n_arcs))
    for a in range(problem.n_arcs):
        A[problem.tail[a], a] += 1
        A[problem.head[a], a] -= 1
    return linprog(problem.cost, A_eq=A, b_eq=problem.supply,
                   bounds=list(zip([0] * problem.n_arcs, problem.capacity)), method="highs")


@settings(max_examples=150)
@given(flow_problems())
def test_flow_matches_highs(problem):
    sol = solve_flow(problem)
    ref = highs_flow(problem)
    if ref.status == 2:
        assert sol.status == "infeasible"
        return
    assert sol.optimal
    assert sol.cost == pytest.approx(ref.fun, abs=1e-6)
    assert certificate_violations(problem, sol) == []
    assert sol.flow.dtype.kind == "i"


@settings(max_examples=60)
@given(flow_problems(max_nodes=6))
def test_flow_matches_native_lp(problem):
    sol = solve_flow(problem)
    lp = solve_lp(flow_lp(problem))
    if not sol.optimal:
        assert lp.status == "infeasible"
        return
    assert lp.optimal
    assert lp.objective == pytest.approx(sol.cost, abs=1e-6)


@settings(max_examples=60)
@given(flow_problems(max_nodes=6))
def test_residual_distances_are_supply_derivatives(problem):
    sol = solve_flow(problem)
    if not sol.optimal:
        return
    target = problem.n_nodes - 1
    to_t, from_t = residual_distances(problem, sol, target)
    for v in range(problem.n_nodes - 1):
        for sign, dist in ((1, to_t[v]), (-1, from_t[v])):
            supply = problem.supply.copy()
            supply[v] += sign
            supply[target] -= sign
            moved = solve_flow(FlowProblem(problem.n_nodes, supply, problem.tail, problem.head,
                                           problem.capacity, problem.cost))
            if np.isinf(dist):
                assert not moved.optimal
            else:
                assert moved.optimal and moved.cost - sol.cost == dist


def test_bound_duals_follow_reduced_costs():
    # two parallel arcs 0 -> 1, the cheap one saturated
    p = FlowProblem(2, np.array([3, -3]), np.array([0, 0]), np.array([1, 1]), np.array([2, 5]), np.array([1, 4]))
    sol = solve_flow(p)
    assert sol.cost == 2 * 1 + 1 * 4
    lower, upper = extract_bound_duals(p, sol, [0, 1])
    assert upper.tolist() == [3, 0] and lower.tolist() == [0, 0]
    assert reduced_costs(p, sol).tolist() == [-3, 0]


def test_negative_cycle_is_saturated():
    p = FlowProblem(3, np.zeros(3, int), np.array([0, 1, 2]), np.array([1, 2, 0]), np.array([2, 3, 4]),
                    np.array([-1, -1, -1]))
    sol = solve_flow(p)
    assert sol.cost == -6 and sol.flow.tolist() == [2, 2, 2]


def test_infeasible_supply():
    p = FlowProblem(2, np.array([3, -3]), np.array([0]), np.array([1]), np.array([1]), np.array([0]))
    assert solve_flow(p).status == "infeasible"


def test_rejects_unbalanced_supply():
    with pytest.raises(ValueError):
        FlowProblem(2, np.array([1, 0]), np.array([0]), np.array([1]), np.array([1]), np.array([0]))


@given(flow_problems())
def test_dimacs_round_trip(problem):
    buf = io.StringIO()
    write_dimacs(problem, buf, comment="round trip")
    back = read_dimacs(io.StringIO(buf.getvalue()))
    for name in ("supply", "tail", "head", "capacity", "cost"):
        assert np.array_equal(getattr(back, name), getattr(problem, name))


def test_dimacs_rejects_lower_bounds():
    with pytest.raises(ValueError):
        read_dimacs(io.StringIO("p min 2 1\na 1 2 1 3 0\n"))
