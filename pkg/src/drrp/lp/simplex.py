"""Bounded-variable revised simplex.

The LP is put in the form ``[A | I] (x, s) = rhs`` with slack bounds chosen by
row sense, so every row has an explicit logical column.  The basis inverse is
an LU factorisation plus a product-form eta file that is refactorised every
``REFACTOR`` updates.

Cold starts place every nonbasic column at the bound that makes its reduced
cost dual feasible when possible and then run the dual simplex; whatever dual
infeasibility is left is removed by a composite primal phase.  Warm starts
(changed costs or bounds) reuse a stored :class:`Basis`.
"""

from __future__ import annotations

import time

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .problem import FEAS_TOL, OPT_TOL, PIVOT_TOL, Basis, LinearProgram, LpSolution

AT_LOWER, AT_UPPER, BASIC, FREE = 0, 1, 2, 3
REFACTOR = 64
BLAND_AFTER = 50


class _Singular(Exception):
    pass


class SimplexState:
    """Working state for one LP; bounds may be changed between solves."""

    def __init__(self, lp: LinearProgram):
        self.lp = lp
        m, n = lp.n_rows, lp.n_vars
        self.m, self.n = m, n
        self.A = sp.hstack([lp.A, sp.identity(m, format="csc")], format="csc")
        self.AT = self.A.T.tocsr()
        self.c = np.concatenate([lp.c, np.zeros(m)])
        slo = np.where(lp.sense == "G", -np.inf, 0.0)
        shi = np.where(lp.sense == "L", np.inf, 0.0)
        self.lo = np.concatenate([lp.lb, slo])
        self.hi = np.concatenate([lp.ub, shi])
        self.b = lp.rhs.copy()
        self.head = np.arange(n, n + m)
        self.state = np.zeros(n + m, dtype=np.int8)
        self.x = np.zeros(n + m)
        self.iterations = 0
        self._lu = None
        self._etas = []

    # ------------------------------------------------------------ linear algebra

    def _factor(self):
        if self.m == 0:
            self._lu, self._etas = None, []
            return
        B = self.A[:, self.head].tocsc()
        try:
            self._lu = splu(B, permc_spec="COLAMD")
        except RuntimeError as exc:
            raise _Singular(str(exc)) from exc
        self._etas = []

    def ftran(self, v):
        if self.m == 0:
            return v
        v = self._lu.solve(np.asarray(v, dtype=float))
        for r, idx, vals, piv in self._etas:
            vr = v[r] / piv
            if vr != 0.0:
                v[idx] -= vals * vr
            v[r] = vr
        return v

    def btran(self, v):
        if self.m == 0:
            return v
        v = np.array(v, dtype=float)
        for r, idx, vals, piv in reversed(self._etas):
            v[r] = (v[r] - (vals @ v[idx] - piv * v[r])) / piv
        return self._lu.solve(v, trans="T")

    def column(self, j):
        lo, hi = self.A.indptr[j], self.A.indptr[j + 1]
        v = np.zeros(self.m)
        v[self.A.indices[lo:hi]] = self.A.data[lo:hi]
        return v

    def _push_eta(self, r, alpha):
        idx = np.flatnonzero(alpha)
        self._etas.append((r, idx, alpha[idx].copy(), alpha[r]))

    # ------------------------------------------------------------ state helpers

    def _place_nonbasic(self, j, prefer_upper=False):
        lo, hi = self.lo[j], self.hi[j]
        if np.isfinite(lo) and (not prefer_upper or not np.isfinite(hi)):
            self.state[j], self.x[j] = AT_LOWER, lo
        elif np.isfinite(hi):
            self.state[j], self.x[j] = AT_UPPER, hi
        else:
            self.state[j], self.x[j] = FREE, 0.0

    def _recompute_basics(self):
        xn = self.x.copy()
        xn[self.head] = 0.0
        self.x[self.head] = self.ftran(self.b - self.A @ xn)

    def set_bounds(self, lb, ub):
        """Change structural bounds; nonbasic columns snap to the new bounds."""
        n = self.n
        self.lo[:n], self.hi[:n] = lb, ub
        nb = self.state != BASIC
        for j in np.flatnonzero(nb[:n]):
            self._place_nonbasic(j, prefer_upper=self.state[j] == AT_UPPER)
        self._recompute_basics()

    def set_costs(self, c):
        self.c[: self.n] = c

    def cold_start(self):
        """Slack basis with each nonbasic column at its dual-feasible bound if it has one."""
        n, m = self.n, self.m
        self.head = np.arange(n, n + m)
        self.state[:] = 0
        self.state[self.head] = BASIC
        for j in range(n):
            self._place_nonbasic(j, prefer_upper=self.c[j] < 0)
        self._factor()
        self._recompute_basics()

    def load(self, basis: Basis):
        self.head = np.array(basis.head, dtype=np.int64)
        self.state[:] = 0
        self.state[self.head] = BASIC
        for j in np.flatnonzero(self.state != BASIC):
            self._place_nonbasic(j, prefer_upper=bool(basis.at_upper[j]))
        self._factor()
        self._recompute_basics()

    def basis(self) -> Basis:
        return Basis(self.head.copy(), self.state == AT_UPPER)

    def reduced(self, cost=None):
        cost = self.c if cost is None else cost
        y = self.btran(cost[self.head])
        d = cost - self.AT @ y
        d[self.head] = 0.0
        return y, d

    def _primal_infeasibility(self):
        xb = self.x[self.head]
        return np.maximum(self.lo[self.head] - xb, 0) + np.maximum(xb - self.hi[self.head], 0)

    def _dual_infeasible(self, d):
        st = self.state
        movable = self.hi > self.lo
        return (((st == AT_LOWER) & movable & (d < -OPT_TOL))
                | ((st == AT_UPPER) & movable & (d > OPT_TOL))
                | ((st == FREE) & (np.abs(d) > OPT_TOL)))

    def _pivot(self, r, j, alpha, leaving_state):
        leaving = self.head[r]
        self.head[r] = j
        self.state[j] = BASIC
        self.state[leaving] = leaving_state
        self._push_eta(r, alpha)
        self.iterations += 1
        if len(self._etas) >= REFACTOR:
            self._factor()
            self._recompute_basics()

    # ------------------------------------------------------------ primal simplex

    def primal(self, max_iter, deadline):
        """Composite primal simplex; returns a status string."""
        degenerate = 0
        while True:
            if self.iterations >= max_iter:
                return "iteration-limit"
            if time.perf_counter() > deadline:
                return "time-limit"
            xb = self.x[self.head]
            below = xb < self.lo[self.head] - FEAS_TOL
            above = xb > self.hi[self.head] + FEAS_TOL
            phase1 = bool(below.any() or above.any())
            if phase1:
                cost = np.zeros(self.n + self.m)
                cost[self.head[below]] = -1.0
                cost[self.head[above]] = 1.0
            else:
                cost = self.c
            _, d = self.reduced(cost)
            bland = degenerate >= BLAND_AFTER
            j, direction = self._choose_entering(d, bland)
            if j < 0:
                return "infeasible" if phase1 else "optimal"
            alpha = self.ftran(self.column(j))
            step, r, leave_state, bound = self._ratio(alpha, direction, j, bland, phase1)
            if r == -2:
                return "unbounded"
            degenerate = degenerate + 1 if step <= 1e-12 else 0
            self.x[self.head] -= direction * step * alpha
            self.x[j] += direction * step
            if r < 0:
                # bound flip
                self.state[j] = AT_UPPER if direction > 0 else AT_LOWER
                self.x[j] = self.hi[j] if direction > 0 else self.lo[j]
                self.iterations += 1
                continue
            leaving = self.head[r]
            self.x[leaving] = bound
            self._pivot(r, j, alpha, leave_state)

    def _choose_entering(self, d, bland):
        st = self.state
        movable = self.hi > self.lo
        inc = (((st == AT_LOWER) & movable) | (st == FREE)) & (d < -OPT_TOL)
        dec = (((st == AT_UPPER) & movable) | (st == FREE)) & (d > OPT_TOL)
        score = np.where(inc | dec, np.abs(d), 0.0)
        if not score.any():
            return -1, 0
        j = int(np.flatnonzero(score)[0]) if bland else int(np.argmax(score))
        return j, (1 if inc[j] else -1)

    def _ratio(self, alpha, direction, j, bland, phase1):
        """Harris two-pass ratio test.  Returns (step, row, leaving state, bound)."""
        delta = -direction * alpha  # change of x_B per unit step
        xb = self.x[self.head]
        lo, hi = self.lo[self.head], self.hi[self.head]
        dec = delta < -PIVOT_TOL
        inc = delta > PIVOT_TOL
        if phase1:
            # infeasible basics may travel to their violated bound and beyond it to the other one
            bnd_dec = np.where(xb > hi + FEAS_TOL, hi, np.where(xb >= lo - FEAS_TOL, lo, -np.inf))
            bnd_inc = np.where(xb < lo - FEAS_TOL, lo, np.where(xb <= hi + FEAS_TOL, hi, np.inf))
        else:
            bnd_dec, bnd_inc = lo, hi
        with np.errstate(invalid="ignore", divide="ignore"):
            gap = np.where(dec, xb - bnd_dec, np.where(inc, bnd_inc - xb, np.inf))
            mag = np.abs(delta)
            ratio = np.where(dec | inc, np.maximum(gap, 0.0) / mag, np.inf)
            relaxed = np.where(dec | inc, (gap + FEAS_TOL) / mag, np.inf)
        ratio = np.where(np.isnan(ratio), np.inf, ratio)
        relaxed = np.where(np.isnan(relaxed), np.inf, relaxed)
        span = self.hi[j] - self.lo[j]
        if self.state[j] == FREE:
            span = np.inf
        if bland:
            tmin = ratio.min() if ratio.size else np.inf
            if span <= tmin:
                return (span, -1, 0, 0.0) if np.isfinite(span) else (0.0, -2, 0, 0.0)
            cand = np.flatnonzero(ratio <= tmin + 1e-12)
            r = int(cand[np.argmin(self.head[cand])])
        else:
            tmax = relaxed.min() if relaxed.size else np.inf
            if not np.isfinite(tmax):
                return (span, -1, 0, 0.0) if np.isfinite(span) else (0.0, -2, 0, 0.0)
            cand = np.flatnonzero(ratio <= tmax)
            r = int(cand[np.argmax(mag[cand])])
            if span <= ratio[r]:
                return span, -1, 0, 0.0
        step = ratio[r]
        if dec[r]:
            bound = bnd_dec[r]
            leave_state = AT_LOWER if bound == lo[r] else AT_UPPER
        else:
            bound = bnd_inc[r]
            leave_state = AT_UPPER if bound == hi[r] and bound != lo[r] else AT_LOWER
        if not np.isfinite(bound):
            leave_state = FREE
            bound = 0.0
        return step, r, leave_state, bound

    # ------------------------------------------------------------ dual simplex

    def dual(self, max_iter, deadline):
        """Bounded dual simplex from a dual-feasible basis."""
        degenerate = 0
        while True:
            if self.iterations >= max_iter:
                return "iteration-limit"
            if time.perf_counter() > deadline:
                return "time-limit"
            infeas = self._primal_infeasibility()
            if not (infeas > FEAS_TOL).any():
                return "optimal"
            bland = degenerate >= BLAND_AFTER
            if bland:
                cand = np.flatnonzero(infeas > FEAS_TOL)
                r = int(cand[np.argmin(self.head[cand])])
            else:
                r = int(np.argmax(infeas))
            leaving = self.head[r]
            below = self.x[leaving] < self.lo[leaving]
            e = np.zeros(self.m)
            e[r] = 1.0
            rho = self.btran(e)
            arow = self.AT @ rho
            arow[self.head] = 0.0
            _, d = self.reduced()
            st = self.state
            movable = self.hi > self.lo
            # x_leaving must increase when below; x_B changes by -alpha * dx_j
            sign = 1.0 if below else -1.0
            a = sign * arow
            elig = ((((st == AT_LOWER) & movable) | (st == FREE)) & (a < -PIVOT_TOL)) | \
                   ((((st == AT_UPPER) & movable) | (st == FREE)) & (a > PIVOT_TOL))
            if not elig.any():
                return "infeasible"
            cand = np.flatnonzero(elig)
            dd = np.abs(d[cand])
            aa = np.abs(a[cand])
            ratios = dd / aa
            if bland:
                tmin = ratios.min()
                pick = np.flatnonzero(ratios <= tmin + 1e-12)
                j = int(cand[pick[0]])
            else:
                tmax = ((dd + OPT_TOL) / aa).min()
                pick = np.flatnonzero(ratios <= tmax)
                j = int(cand[pick[np.argmax(aa[pick])]])
            alpha = self.ftran(self.column(j))
            if abs(alpha[r]) < PIVOT_TOL or abs(alpha[r] - arow[j]) > 1e-6 * (1 + abs(arow[j])):
                self._factor()
                self._recompute_basics()
                alpha = self.ftran(self.column(j))
                if abs(alpha[r]) < PIVOT_TOL:
                    raise _Singular("unstable dual pivot")
            target = self.lo[leaving] if below else self.hi[leaving]
            theta = (self.x[leaving] - target) / alpha[r]
            degenerate = degenerate + 1 if ratios.min() <= 1e-12 else 0
            self.x[self.head] -= theta * alpha
            self.x[j] += theta
            self.x[leaving] = target
            self._pivot(r, j, alpha, AT_LOWER if below else AT_UPPER)

    # ------------------------------------------------------------ driver

    def run(self, max_iter, deadline):
        _, d = self.reduced()
        if not self._dual_infeasible(d).any():
            status = self.dual(max_iter, deadline)
            if status != "optimal":
                return status
        return self.primal(max_iter, deadline)

    def solution(self, status) -> LpSolution:
        n = self.n
        y, d = self.reduced()
        x = self.x[:n].copy()
        obj = float(self.lp.c @ x) if status == "optimal" else float("nan")
        resid = float("nan")
        cs = float("nan")
        dual_obj = float("nan")
        if status == "optimal":
            resid = self.lp.violation(x)
            full = self.x
            dist = np.minimum(np.abs(full - self.lo), np.abs(full - self.hi))
            dist = np.where(np.isfinite(dist), dist, np.abs(full))
            cs = float(np.max(np.abs(d) * dist)) if d.size else 0.0
            bound = np.where(d > OPT_TOL, self.lo, np.where(d < -OPT_TOL, self.hi, full))
            with np.errstate(invalid="ignore"):
                terms = np.where(d != 0, d * bound, 0.0)
            dual_obj = float(self.b @ y + terms.sum())
        return LpSolution(status=status, x=x, objective=obj, duals=y, reduced_costs=d[:n].copy(),
                          iterations=self.iterations, basis=self.basis(), dual_objective=dual_obj,
                          primal_residual=resid, cs_residual=cs)


def solve_lp(lp: LinearProgram, basis: Basis | None = None, max_iter: int = 200_000,
             time_limit: float = float("inf"), state: SimplexState | None = None) -> LpSolution:
    """Solve the continuous relaxation of ``lp`` (integer marks are ignored)."""
    deadline = time.perf_counter() + time_limit
    if state is None:
        state = SimplexState(lp)
    for attempt in range(3):
        try:
            if attempt == 0 and basis is not None:
                state.load(basis)
            elif attempt < 2 or basis is None:
                state.cold_start()
            else:
                break
            status = state.run(max_iter, deadline)
            return state.solution(status)
        except _Singular:
            basis = None
            continue
    state.cold_start()
    return state.solution(state.run(max_iter, deadline))
