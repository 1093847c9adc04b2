import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.integrate import quad

from drrp.vfa import (SparseGradient, StepSizeRule, ValueFunctionApprox, evaluate, evaluate_row, gradient_vector,
                      pava, project_onto_theta, read_snapshots, segment_index, smoothing_direction, step,
                      write_snapshots)


def exhaustive_projection(raw, theta_max):
    """Best feasible point among all contiguous block partitions (blocks at clipped means)."""
    n = len(raw)
    best, best_val = None, np.inf
    for cuts in itertools.product([0, 1], repeat=n - 1):
        bounds = [0] + [k + 1 for k, c in enumerate(cuts) if c] + [n]
        cand = np.concatenate([np.full(b - a, np.clip(raw[a:b].mean(), -theta_max, theta_max))
                               for a, b in zip(bounds, bounds[1:])])
        if np.all(np.diff(cand) >= -1e-12):
            val = np.sum((cand - raw) ** 2)
            if val < best_val:
                best, best_val = cand, val
    return best


def test_projection_matches_exhaustive_oracle():
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        n = int(rng.integers(1, 9))
        raw = rng.normal(0, 6, size=n)
        theta_max = float(rng.uniform(0.5, 10))
        ours = project_onto_theta(raw[None, :], theta_max)[0]
        assert np.max(np.abs(ours - exhaustive_projection(raw, theta_max))) < 1e-8


def test_projection_examples():
    assert project_onto_theta(np.array([[3.0, 1.0]]), 10.0).tolist() == [[2.0, 2.0]]
    ok = np.array([[-1.0, 0.0, 0.0, 4.0]])
    assert np.array_equal(project_onto_theta(ok, 10.0), ok)
    out = project_onto_theta(np.array([[15.0, 1.0, 2.0]]), 10.0)[0]
    assert out.max() <= 10.0 and np.all(np.diff(out) >= 0)


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=12))
def test_pava_is_monotone_and_mean_preserving(values):
    fit = pava(np.array(values))
    assert np.all(np.diff(fit) >= -1e-9)
    assert fit.sum() == pytest.approx(sum(values), abs=1e-7)


def test_evaluate_examples():
    row = np.array([-2.0, -1.0, 0.5, 3.0])
    assert evaluate_row(row, 0.0) == 0.0
    assert evaluate_row(np.full(4, 1.5), 2.0) == pytest.approx(3.0)
    assert evaluate_row(row, 1.5) == pytest.approx(0.5 + 0.5 * 3.0)
    assert evaluate_row(row, -1.0) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        evaluate_row(row, 2.5)


@given(st.lists(st.floats(-5, 5), min_size=6, max_size=6), st.floats(-3, 3))
def test_evaluate_matches_integrated_slopes(raw, x):
    row = np.sort(np.array(raw))

    def slope(u):
        return row[min(int(np.floor(u)), 2) + 3]

    lo, hi = sorted((0.0, x))
    area, _ = quad(slope, lo, hi, points=[p for p in range(-3, 4) if lo < p < hi] or None, limit=50)
    assert evaluate_row(row, x) == pytest.approx(area if x >= 0 else -area, abs=1e-7)


@given(st.lists(st.floats(-5, 5), min_size=8, max_size=8))
def test_evaluate_is_convex(raw):
    row = np.sort(np.array(raw))
    vals = np.array([evaluate_row(row, x) for x in range(-4, 5)])
    assert np.all(np.diff(vals, 2) >= -1e-9)


def test_gradient_examples():
    assert gradient_vector({(1, 1): 0}, {(1, 1): (0.0, 0.0)}, 5).entries == {}
    z = gradient_vector({(1, 1): 2}, {(1, 1): (3.0, 1.0)}, 5)
    assert z.entries == {(1, 1): (2, 2.0)}
    vfa = ValueFunctionApprox.zeros([(1, 1)], 5, 15.0)
    dense = z.dense(vfa)
    assert dense[0, 2 + 5] == 2.0 and np.count_nonzero(dense) == 1


def test_segment_clamps_at_both_ends():
    assert segment_index(5, 5) == 4
    assert segment_index(-5, 5) == -5
    assert segment_index(1.5, 5) == 1
    assert segment_index(0.9999999999, 5) == 1


def test_step_examples():
    vfa = ValueFunctionApprox.zeros([(1, 1), (2, 1)], 2, 15.0)
    assert np.array_equal(step(vfa, SparseGradient(), 0.5).slopes, vfa.slopes)
    new = step(vfa, SparseGradient({(1, 1): (0, 4.0)}), 1.0)
    assert new.row(1, 1).tolist() == [-4 / 3, -4 / 3, -4 / 3, 0.0]
    assert vfa.slopes.sum() == 0.0
    with pytest.raises(ValueError):
        step(vfa, SparseGradient(), 0.0)


def test_smoothing_moves_toward_observed_slope():
    vfa = ValueFunctionApprox.zeros([(1, 1)], 2, 15.0).with_slopes([[0.0, 0.0, 2.0, 2.0]])
    zeta = SparseGradient({(1, 1): (1, 4.0)})
    new = step(vfa, smoothing_direction(vfa, zeta, {(1, 1): 1}), 0.25)
    assert new.row(1, 1)[3] == pytest.approx(0.75 * 2.0 + 0.25 * 4.0)
    assert new.is_admissible()


@given(st.integers(1, 10_000))
def test_step_rules_stay_in_unit_interval(n):
    for rule in (StepSizeRule(), StepSizeRule("constant", 0.5), StepSizeRule("capped_harmonic")):
        assert 0.0 < rule(n) <= 1.0


def test_step_rule_values():
    assert StepSizeRule()(10) == pytest.approx(0.4)
    assert StepSizeRule("capped_harmonic")(40) == pytest.approx(0.5)
    assert StepSizeRule.parse("constant:0.3")(7) == 0.3
    with pytest.raises(ValueError):
        StepSizeRule("cosine")


@given(st.lists(st.tuples(st.integers(-3, 3), st.floats(-9, 9)), min_size=1, max_size=30))
def test_repeated_steps_stay_admissible(updates):
    vfa = ValueFunctionApprox.zeros([(0, 1)], 3, 5.0)
    for n, (y, g) in enumerate(updates, start=1):
        vfa = step(vfa, SparseGradient({(0, 1): (segment_index(y, 3), g)}), StepSizeRule()(n))
        assert vfa.is_admissible()


def test_snapshot_round_trip(tmp_path):
    a = ValueFunctionApprox.zeros([(1, 1), (1, 2)], 2, 15.0).with_slopes([[0.1, 0.2, 0.3, 0.4], [-1, 0, 0, 1]])
    write_snapshots(tmp_path / "theta.csv", [(3, a)])
    back = read_snapshots(tmp_path / "theta.csv")
    assert np.array_equal(back[3][(1, 1)], a.row(1, 1))
    assert evaluate(a, 1, 2, -2) == pytest.approx(-(-1 + 0))
