"""Best-first branch-and-bound over the integer-marked columns."""

from __future__ import annotations

import heapq
import time

import numpy as np

from .problem import INT_TOL, LinearProgram, MipSolution
from .simplex import SimplexState, _Singular, solve_lp


def _fractionality(x, idx):
    v = x[idx]
    return np.abs(v - np.round(v))


def _result(status, lp, x, obj, bound, nodes, timed_out, root, iterations):
    n = lp.n_vars
    if x is None:
        x = np.full(n, np.nan)
    gap = mip_gap(obj, bound)
    return MipSolution(status=status, x=x, objective=obj, duals=root.duals, reduced_costs=root.reduced_costs,
                       iterations=iterations, basis=root.basis, dual_objective=root.dual_objective,
                       primal_residual=lp.violation(x) if np.all(np.isfinite(x)) else float("nan"),
                       cs_residual=root.cs_residual, bound=bound, gap=gap, nodes=nodes, timed_out=timed_out,
                       root_objective=root.objective)


def mip_gap(upper: float, lower: float) -> float:
    """Relative gap ``(UB - LB) / max(|UB|, 1e-9)``; inf without an incumbent."""
    if not np.isfinite(upper):
        return float("inf")
    return max(0.0, upper - lower) / max(abs(upper), 1e-9)


def solve_mip(lp: LinearProgram, rel_gap: float = 5e-3, time_limit: float = float("inf"),
              abs_gap: float = 1e-6, incumbent=None, basis=None, max_nodes: int = 1_000_000,
              priority=None, heuristic=None, heuristic_every: int = 50) -> MipSolution:
    """Branch-and-bound; most-fractional branching with ties to the lowest index.

    Termination is finite when every integer-marked column has finite
    bounds; otherwise the search can walk a zero-cost ray until a limit.

    ``priority`` (one integer per column) restricts branching to the fractional
    columns of highest priority.  ``heuristic(x)`` receives node LP points
    (the root and every ``heuristic_every``-th node) and may return a full
    candidate point, which is kept if feasible and better.

    Nodes are explored best bound first (ties: lowest node id).  After a branch
    the child on the rounding side is solved immediately (plunging) while the
    sibling waits in the queue.  ``incumbent`` may carry a known feasible point.
    """
    start = time.perf_counter()
    deadline = start + time_limit
    int_idx = np.flatnonzero(lp.integer)
    prio = None if priority is None else np.asarray(priority)[int_idx]
    state = SimplexState(lp)
    root = solve_lp(lp, basis=basis, time_limit=time_limit, state=state)
    iterations = root.iterations
    if root.status in ("infeasible", "unbounded"):
        return _result(root.status, lp, None, float("nan"), float("nan"), 0, False, root, iterations)
    if root.status != "optimal":
        return _result(root.status, lp, None, float("inf"), float("-inf"), 0, True, root, iterations)

    best_x, best_obj = None, float("inf")

    def offer(cand):
        nonlocal best_x, best_obj
        if cand is None:
            return
        cand = np.asarray(cand, dtype=float).copy()
        cand[int_idx] = np.round(cand[int_idx])
        if lp.violation(cand) <= 1e-6:
            val = float(lp.c @ cand)
            if val < best_obj:
                best_x, best_obj = cand, val

    if incumbent is not None:
        offer(incumbent)

    def prune_level():
        return best_obj - max(abs_gap, rel_gap * abs(best_obj)) if np.isfinite(best_obj) else float("inf")

    base_lb, base_ub = lp.lb.copy(), lp.ub.copy()
    heap = []
    next_id = 1
    nodes = 0
    timed_out = False
    # current node: (bound, id, lb, ub, solution)
    current = (root.objective, 0, base_lb, base_ub, root)
    while True:
        if current is None:
            if not heap:
                break
            bound, nid, lb, ub, parent_basis = heapq.heappop(heap)
            if bound >= prune_level():
                continue
            if time.perf_counter() > deadline or nodes >= max_nodes:
                heapq.heappush(heap, (bound, nid, lb, ub, parent_basis))
                timed_out = True
                break
            state.lo[: lp.n_vars], state.hi[: lp.n_vars] = lb, ub
            try:
                state.load(parent_basis)
                status = state.run(10**9, deadline)
            except _Singular:
                state.cold_start()
                status = state.run(10**9, deadline)
            nodes += 1
            sol = state.solution(status)
            if status in ("time-limit", "iteration-limit"):
                heapq.heappush(heap, (bound, nid, lb, ub, parent_basis))
                timed_out = True
                break
            if status != "optimal":
                continue
            current = (sol.objective, nid, lb, ub, sol)
        obj, nid, lb, ub, sol = current
        current = None
        if obj >= prune_level():
            continue
        frac = _fractionality(sol.x, int_idx)
        if heuristic is not None and nodes % heuristic_every == 0 and frac.size and frac.max() > INT_TOL:
            offer(heuristic(sol.x))
            if obj >= prune_level():
                continue
        if frac.size == 0 or frac.max() <= INT_TOL:
            x = sol.x.copy()
            x[int_idx] = np.round(x[int_idx])
            val = float(lp.c @ x)
            if val < best_obj:
                best_x, best_obj = x, val
            continue
        if prio is None:
            k = int(np.argmax(frac))
        else:
            live = frac > INT_TOL
            top = prio[live].max()
            k = int(np.argmax(np.where(live & (prio == top), frac, -1.0)))
        j = int(int_idx[k])
        v = sol.x[j]
        down_ub = ub.copy()
        down_ub[j] = np.floor(v)
        up_lb = lb.copy()
        up_lb[j] = np.ceil(v)
        children = [(lb, down_ub), (up_lb, ub)]
        if v - np.floor(v) >= 0.5:
            children.reverse()
        (first_lb, first_ub), (second_lb, second_ub) = children
        heapq.heappush(heap, (obj, next_id + 1, second_lb, second_ub, sol.basis))
        first_id = next_id
        next_id += 2
        if time.perf_counter() > deadline or nodes >= max_nodes:
            heapq.heappush(heap, (obj, first_id, first_lb, first_ub, sol.basis))
            timed_out = True
            break
        # plunge: the state still holds the parent basis
        state.set_bounds(first_lb, first_ub)
        try:
            status = state.run(10**9, deadline)
        except _Singular:
            state.cold_start()
            status = state.run(10**9, deadline)
        nodes += 1
        child = state.solution(status)
        if status in ("time-limit", "iteration-limit"):
            heapq.heappush(heap, (obj, first_id, first_lb, first_ub, sol.basis))
            timed_out = True
            break
        if status == "optimal":
            current = (child.objective, first_id, first_lb, first_ub, child)

    iterations = state.iterations
    open_bounds = [h[0] for h in heap if h[0] < prune_level()]
    bound = min(open_bounds) if open_bounds else best_obj
    if best_x is None:
        if timed_out:
            return _result("time-limit", lp, None, float("inf"), min(open_bounds, default=root.objective),
                           nodes, True, root, iterations)
        return _result("infeasible", lp, None, float("nan"), float("nan"), nodes, False, root, iterations)
    bound = min(bound, best_obj)
    status = "time-limit" if timed_out and mip_gap(best_obj, bound) > rel_gap else "optimal"
    return _result(status, lp, best_x, best_obj, bound, nodes, timed_out, root, iterations)
