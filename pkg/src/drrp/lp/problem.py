"""Linear program container, incremental builder and MPS export."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

FEAS_TOL = 1e-7
OPT_TOL = 1e-7
INT_TOL = 1e-6
PIVOT_TOL = 1e-9

SENSES = ("L", "E", "G")


@dataclass(frozen=True, eq=False)
class LinearProgram:
    """``min c.x  s.t.  A x (<=,=,>=) rhs,  lb <= x <= ub``; some x integer."""

    c: np.ndarray
    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    sense: np.ndarray
    rhs: np.ndarray
    lb: np.ndarray
    ub: np.ndarray
    integer: np.ndarray | None = None
    names: tuple | None = None

    def __post_init__(self):
        c = np.asarray(self.c, dtype=float)
        n = c.shape[0]
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "rows", np.asarray(self.rows, dtype=np.int64))
        object.__setattr__(self, "cols", np.asarray(self.cols, dtype=np.int64))
        object.__setattr__(self, "vals", np.asarray(self.vals, dtype=float))
        object.__setattr__(self, "sense", np.asarray(self.sense, dtype="<U1"))
        object.__setattr__(self, "rhs", np.asarray(self.rhs, dtype=float))
        object.__setattr__(self, "lb", np.asarray(self.lb, dtype=float))
        object.__setattr__(self, "ub", np.asarray(self.ub, dtype=float))
        integer = np.zeros(n, bool) if self.integer is None else np.asarray(self.integer, dtype=bool)
        object.__setattr__(self, "integer", integer)
        m = self.rhs.shape[0]
        if self.sense.shape[0] != m:
            raise ValueError("one sense per row")
        if self.lb.shape[0] != n or self.ub.shape[0] != n or integer.shape[0] != n:
            raise ValueError("bounds and integer mask need one entry per variable")
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= m):
            raise ValueError("row index out of range")
        if self.cols.size and (self.cols.min() < 0 or self.cols.max() >= n):
            raise ValueError("column index out of range")
        if not set(np.unique(self.sense)).issubset(SENSES):
            raise ValueError("row senses must be L, E or G")
        if np.any(self.lb > self.ub):
            raise ValueError("lower bound above upper bound")

    @property
    def n_vars(self) -> int:
        return self.c.shape[0]

    @property
    def n_rows(self) -> int:
        return self.rhs.shape[0]

    @cached_property
    def A(self) -> sp.csc_matrix:
        A = sp.csc_matrix((self.vals, (self.rows, self.cols)), shape=(self.n_rows, self.n_vars))
        A.sum_duplicates()
        return A

    def _derive(self, **changes) -> "LinearProgram":
        fields = dict(c=self.c, rows=self.rows, cols=self.cols, vals=self.vals, sense=self.sense,
                      rhs=self.rhs, lb=self.lb, ub=self.ub, integer=self.integer, names=self.names)
        fields.update(changes)
        out = LinearProgram(**fields)
        if "A" in self.__dict__:
            out.__dict__["A"] = self.A
        return out

    def with_costs(self, c) -> "LinearProgram":
        return self._derive(c=np.asarray(c, dtype=float))

    def with_bounds(self, lb=None, ub=None) -> "LinearProgram":
        return self._derive(lb=self.lb if lb is None else lb, ub=self.ub if ub is None else ub)

    def with_integer(self, mask) -> "LinearProgram":
        return self._derive(integer=np.asarray(mask, dtype=bool))

    def relaxed(self) -> "LinearProgram":
        return self.with_integer(np.zeros(self.n_vars, bool))

    def activity(self, x) -> np.ndarray:
        return self.A @ np.asarray(x, dtype=float)

    def violation(self, x) -> float:
        """Largest row or bound violation of ``x`` (0 when feasible)."""
        x = np.asarray(x, dtype=float)
        ax = self.activity(x)
        v = 0.0
        if self.n_rows:
            r = np.where(self.sense == "L", np.maximum(ax - self.rhs, 0),
                         np.where(self.sense == "G", np.maximum(self.rhs - ax, 0), np.abs(ax - self.rhs)))
            v = float(r.max())
        if self.n_vars:
            v = max(v, float(np.max(np.maximum(self.lb - x, 0))), float(np.max(np.maximum(x - self.ub, 0))))
        return v

    def counts(self) -> dict:
        return {"integer": int(self.integer.sum()), "continuous": int((~self.integer).sum()),
                "constraints": self.n_rows}


@dataclass(frozen=True)
class Basis:
    """Warm-start information: basic column per row and nonbasic-at-upper flags."""

    head: np.ndarray
    at_upper: np.ndarray


@dataclass(frozen=True)
class LpSolution:
    status: str
    x: np.ndarray
    objective: float
    duals: np.ndarray
    reduced_costs: np.ndarray
    iterations: int = 0
    basis: Basis | None = None
    dual_objective: float = float("nan")
    primal_residual: float = float("nan")
    cs_residual: float = float("nan")

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass(frozen=True)
class MipSolution(LpSolution):
    bound: float = float("-inf")
    gap: float = float("inf")
    nodes: int = 0
    timed_out: bool = False
    root_objective: float = float("nan")


class LpBuilder:
    """Accumulates variables and rows, then emits a :class:`LinearProgram`."""

    def __init__(self):
        self._c, self._lb, self._ub, self._int, self._names = [], [], [], [], []
        self._rows, self._cols, self._vals = [], [], []
        self._sense, self._rhs = [], []

    @property
    def n_vars(self) -> int:
        return sum(len(c) for c in self._c)

    @property
    def n_rows(self) -> int:
        return len(self._rhs)

    def add_vars(self, count, cost=0.0, lb=0.0, ub=np.inf, integer=False, names=None) -> np.ndarray:
        start = self.n_vars
        self._c.append(np.broadcast_to(np.asarray(cost, float), (count,)).copy())
        self._lb.append(np.broadcast_to(np.asarray(lb, float), (count,)).copy())
        self._ub.append(np.broadcast_to(np.asarray(ub, float), (count,)).copy())
        self._int.append(np.broadcast_to(np.asarray(integer, bool), (count,)).copy())
        self._names.extend(names if names is not None else [None] * count)
        return np.arange(start, start + count)

    def is_integer(self, col: int) -> bool:
        for block in self._int:
            if col < len(block):
                return bool(block[col])
            col -= len(block)
        raise IndexError(col)

    def add_row(self, cols, vals, sense, rhs) -> int:
        r = len(self._rhs)
        cols = np.asarray(cols, dtype=np.int64)
        self._rows.append(np.full(cols.shape[0], r, dtype=np.int64))
        self._cols.append(cols)
        self._vals.append(np.broadcast_to(np.asarray(vals, float), cols.shape).copy())
        self._sense.append(sense)
        self._rhs.append(float(rhs))
        return r

    def build(self) -> LinearProgram:
        cat = lambda parts, dt: np.concatenate(parts).astype(dt) if parts else np.zeros(0, dt)
        names = tuple(self._names) if any(n is not None for n in self._names) else None
        return LinearProgram(
            c=cat(self._c, float), rows=cat(self._rows, np.int64), cols=cat(self._cols, np.int64),
            vals=cat(self._vals, float), sense=np.array(self._sense, dtype="<U1"), rhs=np.array(self._rhs),
            lb=cat(self._lb, float), ub=cat(self._ub, float), integer=cat(self._int, bool), names=names,
        )


# ---------------------------------------------------------------- MPS export


def _num(v: float) -> str:
    return repr(float(v))


def write_mps(lp: LinearProgram, fh, name: str = "LP") -> None:
    """Free-format MPS with integer markers."""
    A = lp.A
    fh.write(f"NAME {name}\nROWS\n N OBJ\n")
    for r in range(lp.n_rows):
        fh.write(f" {lp.sense[r]} R{r}\n")
    fh.write("COLUMNS\n")
    in_int = False
    for j in range(lp.n_vars):
        if lp.integer[j] and not in_int:
            fh.write(" MARKER 'MARKER' 'INTORG'\n")
            in_int = True
        elif not lp.integer[j] and in_int:
            fh.write(" MARKER 'MARKER' 'INTEND'\n")
            in_int = False
        fh.write(f" X{j} OBJ {_num(lp.c[j])}\n")
        for k in range(A.indptr[j], A.indptr[j + 1]):
            fh.write(f" X{j} R{A.indices[k]} {_num(A.data[k])}\n")
    if in_int:
        fh.write(" MARKER 'MARKER' 'INTEND'\n")
    fh.write("RHS\n")
    for r in range(lp.n_rows):
        if lp.rhs[r] != 0:
            fh.write(f" RHS R{r} {_num(lp.rhs[r])}\n")
    fh.write("BOUNDS\n")
    for j in range(lp.n_vars):
        lo, hi = lp.lb[j], lp.ub[j]
        if lo == hi:
            fh.write(f" FX BND X{j} {_num(lo)}\n")
            continue
        if np.isinf(lo) and np.isinf(hi):
            fh.write(f" FR BND X{j}\n")
            continue
        if np.isinf(lo):
            fh.write(f" MI BND X{j}\n")
        elif lo != 0 or lp.integer[j]:
            fh.write(f" LO BND X{j} {_num(lo)}\n")
        if np.isinf(hi):
            if lp.integer[j]:
                fh.write(f" PL BND X{j}\n")
        else:
            fh.write(f" UP BND X{j} {_num(hi)}\n")
    fh.write("ENDATA\n")


def read_mps(fh) -> LinearProgram:
    """Reader for the subset emitted by :func:`write_mps`."""
    section = None
    row_ix, senses = {}, []
    col_ix, c, integer = {}, [], []
    rows, cols, vals = [], [], []
    rhs = {}
    bounds = {}
    in_int = False
    for raw in fh:
        line = raw.strip()
        if not line:
            continue
        if not raw[0].isspace():
            section = line.split()[0]
            continue
        parts = line.split()
        if section == "ROWS":
            if parts[0] != "N":
                row_ix[parts[1]] = len(senses)
                senses.append(parts[0])
        elif section == "COLUMNS":
            if parts[0] == "MARKER":
                in_int = parts[2].strip("'") == "INTORG"
                continue
            name = parts[0]
            if name not in col_ix:
                col_ix[name] = len(c)
                c.append(0.0)
                integer.append(in_int)
            j = col_ix[name]
            for rname, val in zip(parts[1::2], parts[2::2]):
                if rname == "OBJ":
                    c[j] = float(val)
                else:
                    rows.append(row_ix[rname])
                    cols.append(j)
                    vals.append(float(val))
        elif section == "RHS":
            for rname, val in zip(parts[1::2], parts[2::2]):
                rhs[row_ix[rname]] = float(val)
        elif section == "BOUNDS":
            bounds.setdefault(col_ix[parts[2]], []).append((parts[0], float(parts[3]) if len(parts) > 3 else None))
    n = len(c)
    lb, ub = np.zeros(n), np.full(n, np.inf)
    for j, items in bounds.items():
        for kind, val in items:
            if kind == "FX":
                lb[j] = ub[j] = val
            elif kind == "FR":
                lb[j], ub[j] = -np.inf, np.inf
            elif kind == "MI":
                lb[j] = -np.inf
            elif kind == "PL":
                ub[j] = np.inf
            elif kind == "LO":
                lb[j] = val
            elif kind == "UP":
                ub[j] = val
    m = len(senses)
    return LinearProgram(c=np.array(c), rows=rows, cols=cols, vals=vals, sense=np.array(senses, dtype="<U1"),
                         rhs=np.array([rhs.get(r, 0.0) for r in range(m)]), lb=lb, ub=ub,
                         integer=np.array(integer, bool))
