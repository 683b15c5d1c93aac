import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from coarsened import (compact_strata, estimate, estimate_ace, estimate_acet, estimating_function,
                       summarize_strata, wald_inference)
from coarsened.dataset import from_arrays
from coarsened.errors import DataError, NumericError
from coarsened.estimator import StratumSummary

from oracles import naive_ace, naive_acet


def make(y, t, labels):
    d = from_arrays(y, t, np.zeros((len(y), 1)))
    return d, compact_strata(labels, t)


def test_summary_example():
    d, s = make([3, 5, 1, 1], [1, 1, 0, 0], [0, 0, 0, 0])
    (sm,) = summarize_strata(d, s)
    assert (sm.mean1, sm.mean0, sm.var1, sm.var0) == (4.0, 1.0, 2.0, 0.0)


def test_summary_singleton_undefined():
    d, s = make([3, 1, 2], [1, 0, 0], [0, 0, 0])
    (sm,) = summarize_strata(d, s)
    assert sm.var1 is None and sm.var0 == 0.5


def test_summary_requires_both_arms():
    d, s = make([3, 1, 2, 4], [1, 0, 1, 1], [0, 0, 1, 1])
    with pytest.raises(DataError):
        summarize_strata(d, s)


def two_strata():
    a = StratumSummary(0, 4, 2, 2, 4.0, 1.0, 2.0, 0.0)
    b = StratumSummary(1, 2, 1, 1, 2.0, 0.0, None, None)
    return [a, b]


def test_ace_two_strata_example():
    est = estimate_ace(two_strata())
    assert est.tau_hat == pytest.approx(8 / 3, abs=1e-15)
    assert est.var_hat == pytest.approx(4 / 9, abs=1e-15)
    assert est.notes


def test_variance_policies():
    drop = estimate_ace(two_strata(), variance_policy="drop_stratum")
    assert drop.tau_hat == pytest.approx(3.0) and drop.var_hat == pytest.approx(1.0)
    with pytest.raises(NumericError):
        estimate_ace(two_strata(), variance_policy="error")
    # na_rm keeps the point estimate and excludes the singleton stratum's variance
    narm = estimate_ace(two_strata(), variance_policy="na_rm")
    assert narm.tau_hat == pytest.approx(8 / 3) and narm.var_hat == pytest.approx(4 / 9)


def test_ace_single_stratum():
    est = estimate_ace([StratumSummary(0, 4, 2, 2, 2.0, 1.0, 0.0, 0.0)])
    assert est.tau_hat == 1.0 and est.var_hat == 0.0


def test_acet_example():
    d, s = make([3, 5, 1, 2, 0, 0], [1, 1, 0, 1, 0, 0], [0, 0, 0, 1, 1, 1])
    sm = summarize_strata(d, s)
    assert [x.w for x in sm] == [2.0, 0.5]
    est = estimate_acet(sm)
    assert est.tau_hat == pytest.approx(2.0, abs=1e-15)


def test_acet_single_stratum_is_ace():
    d, s = make([3, 5, 1, 2], [1, 1, 0, 0], [0, 0, 0, 0])
    a = estimate(d, s, "ACE")
    b = estimate(d, s, "ACET")
    assert b.strata[0].w == 1.0
    assert (a.tau_hat, a.var_hat) == (b.tau_hat, b.var_hat)


def test_acet_zero_control_means():
    d, s = make([3, 5, 0, 2, 0, 0], [1, 1, 0, 1, 0, 0], [0, 0, 0, 1, 1, 1])
    est = estimate(d, s, "ACET")
    assert est.tau_hat == pytest.approx(3 / 6 * 4 + 3 / 6 * 2)


def test_att_conventional_weights_by_treated_share():
    d, s = make([3, 5, 1, 2, 0, 0], [1, 1, 0, 1, 0, 0], [0, 0, 0, 1, 1, 1])
    est = estimate(d, s, "ACET", att_conventional=True)
    assert est.tau_hat == pytest.approx(2 / 3 * 3 + 1 / 3 * 2)
    assert est.weight_mode == "treated"


def test_total_weight_mode():
    d, s = make([3, 5, 1, 1, 9], [1, 1, 0, 0, 1], [0, 0, 0, 0, -1])
    r = estimate(d, s, weight_mode="retained")
    tot = estimate(d, s, weight_mode="total")
    assert r.tau_hat == pytest.approx(3.0)
    assert tot.tau_hat == pytest.approx(3.0 * 4 / 5)


def test_wald_paper_p_values():
    # the reference p-values follow from the unrounded extrapolated variances
    _, p, _ = wald_inference(-0.041, 0.0001863553)
    assert p == pytest.approx(0.003, abs=5e-4)
    _, p, _ = wald_inference(-0.02168539, 0.0002077953)
    assert p == pytest.approx(0.13, abs=5e-3)
    _, p, _ = wald_inference(-0.021, 0.014 ** 2)
    assert p == pytest.approx(0.13, abs=5e-3)


def test_wald_rounded_se_follows_formula():
    # a rounded se = 0.01 gives z = -4.1, far below 0.003
    z, p, _ = wald_inference(-0.041, 0.01 ** 2)
    assert z == pytest.approx(-4.1)
    assert p == pytest.approx(2 * 0.5 * math.erfc(4.1 / math.sqrt(2)), rel=1e-9)


def test_wald_zero_effect():
    z, p, ci = wald_inference(0.0, 0.25)
    assert z == 0.0 and p == 1.0
    assert ci[0] == -ci[1]
    assert ci[1] == pytest.approx(1.959963984540054 * 0.5)


def test_wald_zero_variance():
    with pytest.warns(UserWarning):
        assert wald_inference(0.0, 0.0)[1] == 1.0
    with pytest.warns(UserWarning):
        assert wald_inference(1.0, 0.0)[1] == 0.0


def random_instance(rng):
    J = int(rng.integers(1, 7))
    n = int(rng.integers(2 * J, 51))
    labels = np.concatenate([np.repeat(np.arange(J), 2), rng.integers(0, J, n - 2 * J)])
    t = np.empty(n, dtype=int)
    for j in range(J):
        rows = np.flatnonzero(labels == j)
        t[rows] = rng.integers(0, 2, rows.size)
        t[rows[0]], t[rows[1]] = 1, 0
    y = rng.normal(size=n) * 3 + labels
    return y, t, labels


def test_oracle_equivalence_small():
    rng = np.random.default_rng(2024)
    for _ in range(60):
        y, t, labels = random_instance(rng)
        d, s = make(y, t, labels)
        ace = estimate(d, s, "ACE")
        acet = estimate(d, s, "ACET")
        assert ace.tau_hat == pytest.approx(naive_ace(y, t, labels)[0], abs=1e-12)
        assert ace.var_hat == pytest.approx(naive_ace(y, t, labels)[1], abs=1e-12)
        assert acet.tau_hat == pytest.approx(naive_acet(y, t, labels)[0], abs=1e-12)
        assert acet.var_hat == pytest.approx(naive_acet(y, t, labels)[1], abs=1e-12)
        assert abs(estimating_function(ace.tau_hat, y, t, s.labels)) < 1e-10


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 50), st.floats(-100, 100))
def test_scale_and_location(seed, c, shift):
    y, t, labels = random_instance(np.random.default_rng(seed))
    d, s = make(y, t, labels)
    base = estimate(d, s)
    scaled = estimate(make(c * y, t, labels)[0], s)
    moved = estimate(make(y + shift, t, labels)[0], s)
    assert scaled.tau_hat == pytest.approx(c * base.tau_hat, rel=1e-9, abs=1e-9)
    assert scaled.var_hat == pytest.approx(c * c * base.var_hat, rel=1e-9, abs=1e-12)
    if base.var_hat > 0:
        assert scaled.p == pytest.approx(base.p, rel=1e-6, abs=1e-12)
    assert moved.tau_hat == pytest.approx(base.tau_hat, abs=1e-9)
    assert moved.var_hat == pytest.approx(base.var_hat, rel=1e-9, abs=1e-12)
    # printed ACET: a shift moves tau by shift * sum_j (n_j/n)(1 - w_j), which is not zero
    # in general; variance is unaffected and the conventional variant is shift-invariant
    b = estimate(d, s, "ACET")
    m = estimate(make(y + shift, t, labels)[0], s, "ACET")
    drift = shift * sum(x.n / b.n_denominator * (1 - x.w) for x in b.strata)
    assert m.tau_hat == pytest.approx(b.tau_hat + drift, abs=1e-9)
    assert m.var_hat == pytest.approx(b.var_hat, rel=1e-9, abs=1e-12)
    bc = estimate(d, s, "ACET", att_conventional=True)
    mc = estimate(make(y + shift, t, labels)[0], s, "ACET", att_conventional=True)
    assert mc.tau_hat == pytest.approx(bc.tau_hat, abs=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_relabel_invariance(seed):
    rng = np.random.default_rng(seed)
    y, t, labels = random_instance(rng)
    perm = rng.permutation(labels.max() + 1)
    a = estimate(*make(y, t, labels))
    b = estimate(*make(y, t, perm[labels]))
    assert b.tau_hat == pytest.approx(a.tau_hat, abs=1e-12)
    assert b.var_hat == pytest.approx(a.var_hat, abs=1e-12)


def test_retained_weights_sum_to_one():
    y, t, labels = random_instance(np.random.default_rng(3))
    est = estimate(*make(y, t, labels))
    assert sum(s.n for s in est.strata) / est.n_denominator == 1.0


def test_single_stratum_difference_in_means():
    rng = np.random.default_rng(5)
    y = rng.normal(size=30)
    t = np.arange(30) % 3 == 0
    est = estimate(*make(y, t.astype(int), np.zeros(30, int)))
    y1, y0 = y[t], y[~t]
    assert est.tau_hat == pytest.approx(y1.mean() - y0.mean(), abs=1e-14)
    unpooled = y1.var(ddof=1) / y1.size + y0.var(ddof=1) / y0.size
    assert est.var_hat == pytest.approx(unpooled, rel=1e-13)
    assert est.ci[0] < est.tau_hat < est.ci[1]
    assert est.se == math.sqrt(est.var_hat)
