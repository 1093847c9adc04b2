"""Separable piecewise-linear cost-to-go and its projected stochastic updates.

For every action slot ``(i, t)`` the approximation is a convex piecewise-linear
function of the net action ``x = y_minus - y_plus`` on ``[-ybar, ybar]`` with
unit breakpoints.  Slope ``n`` of the stored row covers ``[y', y'+1]`` with
``y' = n - ybar``.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True, eq=False)
class ValueFunctionApprox:
    keys: tuple  # action slots (i, t)
    slopes: np.ndarray  # shape (len(keys), 2 * ybar)
    theta_max: float
    theta0: float = 0.0

    def __post_init__(self):
        s = np.array(self.slopes, dtype=float)
        if s.ndim != 2 or s.shape[0] != len(self.keys) or s.shape[1] % 2:
            raise ValueError("slopes must be (n_slots, 2*ybar)")
        s.setflags(write=False)
        object.__setattr__(self, "slopes", s)
        object.__setattr__(self, "keys", tuple(tuple(k) for k in self.keys))
        object.__setattr__(self, "_pos", {k: n for n, k in enumerate(self.keys)})

    @classmethod
    def zeros(cls, keys, ybar: int, theta_max: float) -> "ValueFunctionApprox":
        return cls(tuple(keys), np.zeros((len(keys), 2 * ybar)), float(theta_max))

    @property
    def ybar(self) -> int:
        return self.slopes.shape[1] // 2

    def row(self, i, t) -> np.ndarray:
        return self.slopes[self._pos[(i, t)]]

    def position(self, key) -> int:
        return self._pos[key]

    def with_slopes(self, slopes) -> "ValueFunctionApprox":
        return ValueFunctionApprox(self.keys, slopes, self.theta_max, self.theta0)

    def is_admissible(self, tol: float = 1e-9) -> bool:
        s = self.slopes
        mono = bool(np.all(np.diff(s, axis=1) >= -tol)) if s.size else True
        return mono and bool(np.all(np.abs(s) <= self.theta_max + tol))


def default_theta_max(value_high: float) -> float:
    return 10.0 * value_high


def evaluate_row(row: np.ndarray, x: float) -> float:
    ybar = row.shape[0] // 2
    if not -ybar - 1e-9 <= x <= ybar + 1e-9:
        raise ValueError(f"net action {x} outside [-{ybar}, {ybar}]")
    x = min(max(x, -ybar), ybar)
    if x >= 0:
        whole = int(math.floor(x))
        val = float(row[ybar: ybar + whole].sum())
        frac = x - whole
        if frac > 0:
            val += frac * row[ybar + whole]
        return val
    whole = int(math.ceil(x))  # <= 0
    val = -float(row[ybar + whole: ybar].sum())
    frac = whole - x
    if frac > 0:
        val -= frac * row[ybar + whole - 1]
    return val


def evaluate(vfa: ValueFunctionApprox, i, t, x: float) -> float:
    """Piecewise-linear value through the origin at net action ``x``."""
    return evaluate_row(vfa.row(i, t), x)


def total_value(vfa: ValueFunctionApprox, net: dict) -> float:
    return vfa.theta0 + sum(evaluate(vfa, i, t, x) for (i, t), x in net.items() if x)


def segment_index(x: float, ybar: int) -> int:
    """Slope segment ``y'`` whose interval holds ``x``; the right end maps to ``ybar - 1``."""
    y = int(math.floor(x + 1e-9))
    return min(max(y, -ybar), ybar - 1)


@dataclass(frozen=True)
class SparseGradient:
    """At most one nonzero per row: ``entries[(i, t)] = (y', value)``."""

    entries: dict = field(default_factory=dict)

    def dense(self, vfa: ValueFunctionApprox) -> np.ndarray:
        g = np.zeros_like(vfa.slopes)
        for key, (y, v) in self.entries.items():
            g[vfa.position(key), y + vfa.ybar] += v
        return g


def gradient_vector(net: dict, duals: dict, ybar: int) -> SparseGradient:
    """``zeta`` at ``y' = y_minus - y_plus`` equals ``lambda_plus - lambda_minus``.

    ``net`` maps every action slot to its net action, ``duals`` maps it to
    ``(lambda_plus, lambda_minus)``.  Slots missing from ``net`` sit at zero.
    """
    out = {}
    for key, (lp, lm) in duals.items():
        g = lp - lm
        if ybar == 0 or g == 0:
            continue
        out[key] = (segment_index(net.get(key, 0.0), ybar), g)
    return SparseGradient(out)


def pava(values: np.ndarray, weights: np.ndarray | None = None) -> np.ndarray:
    """Least-squares nondecreasing fit by pool-adjacent-violators."""
    v = np.asarray(values, dtype=float)
    n = v.shape[0]
    w = np.ones(n) if weights is None else np.asarray(weights, dtype=float)
    means, wts, counts = [], [], []
    for x, wx in zip(v.tolist(), w.tolist()):
        means.append(x)
        wts.append(wx)
        counts.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, c2 = means.pop(), wts.pop(), counts.pop()
            m1, w1 = means[-1], wts[-1]
            tot = w1 + w2
            means[-1] = (m1 * w1 + m2 * w2) / tot
            wts[-1] = tot
            counts[-1] += c2
    return np.repeat(means, counts)


def project_row(raw: np.ndarray, theta_max: float) -> np.ndarray:
    return np.clip(pava(raw), -theta_max, theta_max)


def project_onto_theta(raw: np.ndarray, theta_max: float) -> np.ndarray:
    """Euclidean projection of each row onto nondecreasing vectors within the box."""
    raw = np.asarray(raw, dtype=float)
    out = np.empty_like(raw)
    ok = np.all(np.diff(raw, axis=1) >= 0, axis=1) if raw.shape[1] > 1 else np.ones(raw.shape[0], bool)
    out[ok] = np.clip(raw[ok], -theta_max, theta_max)
    for r in np.flatnonzero(~ok):
        out[r] = project_row(raw[r], theta_max)
    return out


def step(vfa: ValueFunctionApprox, zeta, alpha: float) -> ValueFunctionApprox:
    """``Proj(theta - alpha * zeta)``; returns a new approximation."""
    if not 0.0 < alpha <= 1.0:
        raise ValueError("step size must lie in (0, 1]")
    g = zeta.dense(vfa) if isinstance(zeta, SparseGradient) else np.asarray(zeta, dtype=float)
    raw = vfa.slopes - alpha * g
    return vfa.with_slopes(project_onto_theta(raw, vfa.theta_max))


def smoothing_direction(vfa: ValueFunctionApprox, zeta: SparseGradient, net: dict) -> SparseGradient:
    """Direction whose step equals ``(1 - alpha) theta + alpha * observed`` on visited segments.

    Every visited slot takes part, also those whose observed slope is zero.
    """
    ybar = vfa.ybar
    out = {}
    for key in vfa.keys:
        y = segment_index(net.get(key, 0.0), ybar)
        observed = zeta.entries[key][1] if key in zeta.entries else 0.0
        cur = vfa.row(*key)[y + ybar]
        if cur != observed:
            out[key] = (y, cur - observed)
    return SparseGradient(out)


# ------------------------------------------------------------ step sizes


@dataclass(frozen=True)
class StepSizeRule:
    kind: str = "harmonic_20_40"
    constant: float = 0.5

    KINDS = ("harmonic_20_40", "constant", "capped_harmonic")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown step rule {self.kind!r}")
        if self.kind == "constant" and not 0.0 < self.constant <= 1.0:
            raise ValueError("constant step must lie in (0, 1]")

    def __call__(self, n: int) -> float:
        if n < 1:
            raise ValueError("iterations are counted from 1")
        if self.kind == "harmonic_20_40":
            return 20.0 / (40.0 + n)
        if self.kind == "constant":
            return self.constant
        return min(1.0, 20.0 / n)

    @classmethod
    def parse(cls, text: str) -> "StepSizeRule":
        if text.startswith("constant"):
            _, _, c = text.partition(":")
            return cls("constant", float(c) if c else 0.5)
        return cls(text)


# ------------------------------------------------------------ snapshots


def snapshot_rows(vfa: ValueFunctionApprox, iteration: int):
    ybar = vfa.ybar
    for (i, t), row in zip(vfa.keys, vfa.slopes):
        for n, s in enumerate(row.tolist()):
            yield (i, t, n - ybar, s, iteration)


def write_snapshots(path, snapshots) -> None:
    """``snapshots`` is an iterable of ``(iteration, vfa)``."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "t", "y_prime", "slope", "iteration"])
        for it, vfa in snapshots:
            w.writerows((i, t, y, repr(s), n) for i, t, y, s, n in snapshot_rows(vfa, it))


def read_snapshots(path) -> dict:
    """``iteration -> {(i, t): slopes}``."""
    out: dict = {}
    with open(path, newline="") as fh:
        for r in csv.DictReader(fh):
            it = int(r["iteration"])
            key = (int(r["i"]), int(r["t"]))
            out.setdefault(it, {}).setdefault(key, []).append((int(r["y_prime"]), float(r["slope"])))
    return {it: {k: np.array([s for _, s in sorted(v)]) for k, v in rows.items()} for it, rows in out.items()}
