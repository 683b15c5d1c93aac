import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsened import CEMMethod, KMeansMethod, RFMethod, ols_intercept_at_zero, run_grid
from coarsened.errors import ConfigError, NumericError
from coarsened.extrapolation import GridPoint, extrapolate
from coarsened.simulation import generate, scenario

from oracles import ols_line

KM_J = (2, 5, 10, 20, 45)
KM_TAU = (0.04347558, 0.04300296, 0.008925207, 0.00460203, 0.0002226695)


def test_matches_hand_ols():
    x = [1 / j for j in KM_J]
    fit = ols_intercept_at_zero(x, KM_TAU)
    a, b = ols_line(x, KM_TAU)
    assert fit.intercept == pytest.approx(a, abs=1e-15)
    assert fit.slope == pytest.approx(b, rel=1e-12)
    assert 0 <= fit.r2 <= 1


def test_constant_y():
    fit = ols_intercept_at_zero([0.5, 0.2, 0.1], [3.0, 3.0, 3.0])
    assert fit.intercept == 3.0 and fit.slope == 0.0 and fit.r2 == 1.0


def test_two_points_exact_line():
    fit = ols_intercept_at_zero([0.5, 0.25], [1.0, 2.0])
    assert fit.slope == pytest.approx(-4.0, abs=1e-12)
    assert fit.intercept == pytest.approx(3.0, abs=1e-12)


def test_degenerate_grid():
    with pytest.raises(NumericError, match="degenerate grid"):
        ols_intercept_at_zero([0.5, 0.5], [1.0, 2.0])
    with pytest.raises(NumericError):
        extrapolate([GridPoint(4, 1.0, 0.1, "cem")])


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(-50, 50).filter(lambda a: abs(a) > 1e-3),
       st.floats(-50, 50))
def test_affine_and_order(seed, a, b):
    rng = np.random.default_rng(seed)
    x = 1 / rng.choice(np.arange(2, 60), size=6, replace=False)
    y = rng.normal(size=6)
    base = ols_intercept_at_zero(x, y)
    moved = ols_intercept_at_zero(x, a * y + b)
    assert moved.intercept == pytest.approx(a * base.intercept + b, rel=1e-9, abs=1e-9)
    perm = rng.permutation(6)
    shuffled = ols_intercept_at_zero(x[perm], y[perm])
    assert shuffled.intercept == pytest.approx(base.intercept, rel=1e-12, abs=1e-14)


def test_negative_variance_clamped():
    pts = [GridPoint(2, 0.0, 1.0, "cem"), GridPoint(4, 0.0, 0.2, "cem")]
    with pytest.warns(UserWarning):
        res = extrapolate(pts)
    assert res.var_corrected < 0 and res.var_clamped and res.se_corrected == 0.0


def null_data(seed, n=600):
    return generate(scenario("null", n), seed)[0]


def test_run_grid_kmeans_provenance():
    d = null_data(1)
    res = run_grid(d, KMeansMethod(restarts=2), [2, 4, 8], seed=5)
    assert [p.requested for p in res.points] == [2, 4, 8]
    assert len({p.seed for p in res.points}) == 3
    again = run_grid(d, KMeansMethod(restarts=2), [2, 4, 8], seed=5)
    assert res.to_dict() == again.to_dict()


def test_run_grid_shared_seed():
    d = null_data(2)
    res = run_grid(d, RFMethod(n_trees=30), [2, 3, 5], seed=9, shared_seed=True)
    assert {p.seed for p in res.points} == {9}


def test_run_grid_needs_seed_and_distinct_values():
    d = null_data(3)
    with pytest.raises(ConfigError):
        run_grid(d, KMeansMethod(), [2, 4])
    with pytest.raises(NumericError):
        run_grid(d, KMeansMethod(), [4, 4], seed=1)
    with pytest.raises(ConfigError):
        run_grid(d, KMeansMethod(), [2, 10_000], seed=1)


def test_run_grid_cem_realized_j():
    d = null_data(4)
    res = run_grid(d, CEMMethod(), [4, 9, 16])
    assert all(p.J >= 1 for p in res.points)
    assert res.points[0].diagnostics["bins"] >= 1


def test_null_effect_corrected_within_three_se():
    inside = 0
    for seed in range(20):
        res = run_grid(null_data(100 + seed), KMeansMethod(restarts=1), [2, 4, 8, 16], seed=seed)
        inside += abs(res.tau_corrected) < 3 * res.se_corrected
    assert inside >= 19
