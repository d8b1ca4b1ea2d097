import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ddsindy.regression import (
    ConditioningWarning,
    RegressionError,
    RegressionProblem,
    fit_all,
    lasso,
    solve,
    stls,
)


def planted(seed, m=200, p=10, k=3, noise=0.0):
    rng = np.random.default_rng(seed)
    Theta = rng.standard_normal((m, p))
    xi = np.zeros(p)
    idx = rng.choice(p, k, replace=False)
    xi[idx] = rng.choice([-1, 1], k) * rng.uniform(0.5, 3.0, k)
    y = Theta @ xi + noise * rng.standard_normal(m)
    return Theta, y, xi


def orthonormal(seed, m=60, p=8):
    q, _ = np.linalg.qr(np.random.default_rng(seed).standard_normal((m, p)))
    return q


def test_stls_identity_design():
    res = stls(RegressionProblem(np.eye(3), [1, 0.001, 2], 0.01))
    np.testing.assert_allclose(res.xi, [1, 0, 2])
    np.testing.assert_array_equal(res.support, [0, 2])


def test_stls_zero_lambda_is_least_squares():
    Theta, y, _ = planted(3, noise=0.1)
    res = stls(RegressionProblem(Theta, y, 0.0))
    np.testing.assert_allclose(res.xi, np.linalg.lstsq(Theta, y, rcond=None)[0], rtol=1e-10)
    assert len(res.support) == Theta.shape[1]


@pytest.mark.parametrize("seed", range(5))
def test_stls_planted_recovery(seed):
    Theta, y, xi = planted(seed)
    res = stls(RegressionProblem(Theta, y, 0.1))
    np.testing.assert_array_equal(res.support, np.flatnonzero(xi))
    assert np.max(np.abs(res.xi - xi)) <= 1e-8


@pytest.mark.parametrize("seed", range(5))
def test_stls_planted_recovery_with_noise(seed):
    Theta, y, xi = planted(seed, noise=1e-3)
    res = stls(RegressionProblem(Theta, y, 0.1))
    np.testing.assert_array_equal(res.support, np.flatnonzero(xi))


def test_stls_tie_is_kept():
    res = stls(RegressionProblem(np.eye(2), [0.5, 0.25], 0.25, normalize_columns=False))
    np.testing.assert_array_equal(res.xi, [0.5, 0.25])


def test_stls_threshold_on_raw_scale():
    # a tiny column with a large coefficient survives; normalisation only conditions the solve
    rng = np.random.default_rng(0)
    Theta = np.column_stack([rng.standard_normal(50), 1e-4 * rng.standard_normal(50)])
    y = Theta @ np.array([0.005, 3000.0])
    res = stls(RegressionProblem(Theta, y, 0.01))
    assert res.xi[0] == 0.0
    only = np.linalg.lstsq(Theta[:, 1:], y, rcond=None)[0][0]
    assert res.xi[1] == pytest.approx(only, rel=1e-10)


def test_rank_deficiency_warns():
    Theta = np.column_stack([np.arange(5.0), np.arange(5.0)])
    with pytest.warns(ConditioningWarning):
        res = stls(RegressionProblem(Theta, np.arange(5.0), 0.0))
    assert res.rank_deficient
    np.testing.assert_allclose(res.xi, [0.5, 0.5])  # minimum-norm


def test_empty_support_warns():
    with pytest.warns(RuntimeWarning, match="empty"):
        res = stls(RegressionProblem(np.eye(2), [1e-3, 1e-3], 0.1))
    assert not res.xi.any()


@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 2.0))
def test_stls_threshold_consistency_and_idempotence(seed, lam):
    Theta, y, _ = planted(seed, m=40, p=6, noise=0.3)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        res = stls(RegressionProblem(Theta, y, lam))
        sup = res.support
        assert np.all(np.abs(res.xi[sup]) >= lam)
        if len(sup):
            again = stls(RegressionProblem(Theta[:, sup], y, lam))
            np.testing.assert_array_equal(again.support, np.arange(len(sup)))
            np.testing.assert_allclose(again.xi, res.xi[sup], rtol=1e-10, atol=1e-12)


@given(seed=st.integers(0, 10_000), l1=st.floats(0.0, 1.0), l2=st.floats(0.0, 1.0))
def test_stls_support_nested_in_lambda(seed, l1, l2):
    lo, hi = sorted((l1, l2))
    Q = orthonormal(seed)
    y = Q @ np.random.default_rng(seed + 1).uniform(-1.5, 1.5, Q.shape[1])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        s_lo = set(stls(RegressionProblem(Q, y, lo)).support)
        s_hi = set(stls(RegressionProblem(Q, y, hi)).support)
    assert s_hi <= s_lo


@given(seed=st.integers(0, 10_000), c=st.floats(0.1, 10.0), lam=st.floats(0.01, 1.0))
def test_stls_scale_equivariance(seed, c, lam):
    Q = orthonormal(seed)
    y = Q @ np.random.default_rng(seed + 2).uniform(-1.5, 1.5, Q.shape[1])
    x0 = stls(RegressionProblem(Q, y, 0.0)).xi
    np.testing.assert_allclose(stls(RegressionProblem(Q, c * y, 0.0)).xi, c * x0, rtol=1e-9, atol=1e-12)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        a = stls(RegressionProblem(Q, y, lam)).support
        b = stls(RegressionProblem(Q, c * y, c * lam)).support
    # ties aside (measure zero), supports agree
    coef = np.abs(Q.T @ y)
    if np.all(np.abs(coef - lam) > 1e-9):
        np.testing.assert_array_equal(a, b)


def test_lasso_zero_lambda_is_least_squares():
    Theta, y, _ = planted(4, noise=0.1)
    res = lasso(RegressionProblem(Theta, y, 0.0))
    np.testing.assert_allclose(res.xi, np.linalg.lstsq(Theta, y, rcond=None)[0], rtol=1e-9)


@given(seed=st.integers(0, 10_000), lam=st.floats(0.0, 1.0))
def test_lasso_orthonormal_soft_threshold(seed, lam):
    Q = orthonormal(seed)
    y = np.random.default_rng(seed + 3).standard_normal(Q.shape[0])
    res = lasso(RegressionProblem(Q, y, lam))
    z = Q.T @ y
    np.testing.assert_allclose(res.xi, np.sign(z) * np.maximum(np.abs(z) - lam, 0), atol=1e-7)


def test_lasso_planted_superset_within_two_lambda():
    Q = orthonormal(9, m=200, p=10)
    xi = np.zeros(10)
    xi[[1, 4, 7]] = [1.0, -0.7, 2.0]
    lam = 1e-3
    res = lasso(RegressionProblem(Q, Q @ xi, lam))
    assert set(np.flatnonzero(xi)) <= set(res.support)
    assert np.max(np.abs(res.xi - xi)) <= 2 * lam


def test_fit_all_single_column_matches_solve():
    Theta, y, _ = planted(5)
    a = fit_all(Theta, y, 0.1)
    b = solve(RegressionProblem(Theta, y, 0.1))
    np.testing.assert_array_equal(a.xi[:, 0], b.xi)


def test_fit_all_identical_columns():
    Theta, y, _ = planted(6)
    res = fit_all(Theta, np.column_stack([y, y]), 0.1)
    np.testing.assert_array_equal(res.xi[:, 0], res.xi[:, 1])


def test_problem_validation():
    with pytest.raises(RegressionError, match="rows"):
        RegressionProblem(np.ones((3, 2)), np.ones(4), 0.1)
    with pytest.raises(RegressionError, match="lambda"):
        RegressionProblem(np.ones((3, 2)), np.ones(3), -1)
    with pytest.raises(RegressionError, match="non-finite"):
        RegressionProblem(np.array([[np.nan]]), np.ones(1), 0.1)
    with pytest.raises(RegressionError, match="unknown solver"):
        solve(RegressionProblem(np.eye(2), np.ones(2), 0.1), "omp")
