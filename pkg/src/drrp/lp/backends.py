"""Pluggable solver interface.

``native`` is the built-in simplex / branch-and-bound.  ``highs`` wraps the
HiGHS engine shipped with scipy and exists for cross-checks.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp

from .mip import mip_gap, solve_mip
from .problem import LinearProgram, LpSolution, MipSolution
from .simplex import solve_lp


class NativeBackend:
    name = "native"

    def solve_lp(self, lp: LinearProgram, **kw) -> LpSolution:
        return solve_lp(lp, **kw)

    def solve_mip(self, lp: LinearProgram, rel_gap=5e-3, time_limit=float("inf"), **kw) -> MipSolution:
        return solve_mip(lp, rel_gap=rel_gap, time_limit=time_limit, **kw)


def _split_rows(lp: LinearProgram):
    A = lp.A.tocsr()
    le, ge, eq = (lp.sense == "L"), (lp.sense == "G"), (lp.sense == "E")
    ineq = np.flatnonzero(le | ge)
    sign = np.where(ge[ineq], -1.0, 1.0)
    A_ub = sp.diags(sign) @ A[ineq] if ineq.size else None
    b_ub = sign * lp.rhs[ineq] if ineq.size else None
    eqi = np.flatnonzero(eq)
    A_eq = A[eqi] if eqi.size else None
    b_eq = lp.rhs[eqi] if eqi.size else None
    return ineq, sign, A_ub, b_ub, eqi, A_eq, b_eq


_LINPROG_STATUS = {0: "optimal", 1: "iteration-limit", 2: "infeasible", 3: "unbounded", 4: "numerical"}


class HighsBackend:
    name = "highs"

    def solve_lp(self, lp: LinearProgram, **kw) -> LpSolution:
        from scipy.optimize import linprog

        ineq, sign, A_ub, b_ub, eqi, A_eq, b_eq = _split_rows(lp)
        res = linprog(lp.c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq,
                      bounds=np.column_stack([lp.lb, lp.ub]), method="highs")
        status = _LINPROG_STATUS.get(res.status, "numerical")
        n, m = lp.n_vars, lp.n_rows
        if status != "optimal":
            return LpSolution(status, np.full(n, np.nan), float("nan"), np.zeros(m), np.zeros(n))
        y = np.zeros(m)
        if ineq.size:
            y[ineq] = sign * res.ineqlin.marginals
        if eqi.size:
            y[eqi] = res.eqlin.marginals
        d = lp.c - lp.A.T @ y
        return LpSolution(status, np.asarray(res.x), float(res.fun), y, d, iterations=int(res.nit),
                          primal_residual=lp.violation(res.x))

    def solve_mip(self, lp: LinearProgram, rel_gap=5e-3, time_limit=float("inf"), **kw) -> MipSolution:
        from scipy.optimize import Bounds, LinearConstraint, milp

        lo = np.where(lp.sense == "G", lp.rhs, np.where(lp.sense == "E", lp.rhs, -np.inf))
        hi = np.where(lp.sense == "L", lp.rhs, np.where(lp.sense == "E", lp.rhs, np.inf))
        options = {"mip_rel_gap": rel_gap}
        if np.isfinite(time_limit):
            options["time_limit"] = time_limit
        t0 = time.perf_counter()
        res = milp(lp.c, constraints=[LinearConstraint(lp.A, lo, hi)] if lp.n_rows else None,
                   integrality=lp.integer.astype(int), bounds=Bounds(lp.lb, lp.ub), options=options)
        n, m = lp.n_vars, lp.n_rows
        if res.x is None:
            status = "infeasible" if res.status == 2 else "time-limit"
            return MipSolution(status, np.full(n, np.nan), float("nan"), np.zeros(m), np.zeros(n))
        bound = getattr(res, "mip_dual_bound", None)
        bound = float(res.fun if bound is None else bound)
        timed_out = res.status == 1 or (time.perf_counter() - t0) >= time_limit
        return MipSolution("optimal" if res.status == 0 else "time-limit", np.asarray(res.x), float(res.fun),
                           np.zeros(m), np.zeros(n), primal_residual=lp.violation(res.x), bound=bound,
                           gap=mip_gap(float(res.fun), bound), nodes=int(getattr(res, "mip_node_count", None) or 0),
                           timed_out=bool(timed_out))


BACKENDS = {"native": NativeBackend, "highs": HighsBackend}


def get_backend(name: str = "native"):
    try:
        return BACKENDS[name]()
    except KeyError:
        raise ValueError(f"unknown solver backend {name!r}; choose from {sorted(BACKENDS)}") from None
