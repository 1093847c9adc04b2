"""Bounded-variable simplex and branch-and-bound."""

from .backends import BACKENDS, HighsBackend, NativeBackend, get_backend
from .mip import mip_gap, solve_mip
from .problem import (FEAS_TOL, INT_TOL, OPT_TOL, PIVOT_TOL, Basis, LinearProgram, LpBuilder, LpSolution,
                      MipSolution, read_mps, write_mps)
from .simplex import SimplexState, solve_lp

__all__ = [
    "BACKENDS", "Basis", "FEAS_TOL", "HighsBackend", "INT_TOL", "LinearProgram", "LpBuilder", "LpSolution",
    "MipSolution", "NativeBackend", "OPT_TOL", "PIVOT_TOL", "SimplexState", "get_backend", "mip_gap",
    "read_mps", "solve_lp", "solve_mip", "write_mps",
]
