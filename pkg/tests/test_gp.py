import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from palpsearch.gp import (
    FactorizationError,
    Kernel,
    _cholesky_with_jitter,
    _clamp_variance,
    corrected_kernel_eval,
    fit,
    kernel_eval,
    prior,
)

# Monte-Carlo average of the plain kernel over 1e6 perturbations of both
# inputs (l=1, sf2=1, x1=(0,0), x2=(1,0), S1=S2=0.1 I), seed 12345.
MC_CORRECTED = 0.5495682587083758
MC_CORRECTED_SE = 0.00021860253807060923

coord = st.floats(-5, 5, allow_nan=False)
point = st.tuples(coord, coord)


def dense_oracle(kernel, X, y, Q):
    """Posterior mean and variance by explicit dense solves, no factor reuse."""
    K = np.array([[kernel_eval(kernel, a, b) for b in X] for a in X]) + kernel.noise_variance * np.eye(len(X))
    Ks = np.array([[kernel_eval(kernel, q, b) for b in X] for q in Q])
    mean = Ks @ np.linalg.solve(K, y)
    var = kernel.signal_variance - np.einsum("ij,ji->i", Ks, np.linalg.solve(K, Ks.T))
    return mean, var


def test_kernel_examples():
    k = Kernel(1.0, 1.0, 0.0)
    assert kernel_eval(k, (0, 0), (0, 0)) == 1.0
    assert kernel_eval(k, (0, 0), (1, 0)) == pytest.approx(math.exp(-0.5), abs=1e-12)
    assert kernel_eval(Kernel(2.0, 3.0), (0, 0), (2, 2)) == pytest.approx(3 / math.e, abs=1e-12)


def test_kernel_rejects_bad_hyperparameters():
    with pytest.raises(ValueError):
        Kernel(0.0)
    with pytest.raises(ValueError):
        Kernel(1.0, -1.0)
    with pytest.raises(ValueError):
        Kernel(1.0, 1.0, -1e-3)


@given(point, point)
def test_kernel_symmetric(a, b):
    k = Kernel(0.7, 1.3)
    assert kernel_eval(k, a, b) == kernel_eval(k, b, a)


@given(point, point)
def test_corrected_zero_noise_is_plain_kernel(a, b):
    k = Kernel(0.7, 1.3)
    z = np.zeros((2, 2))
    # rounding in the exponent scales with its size (up to ~745 before underflow): 745 * eps < 1e-12
    assert corrected_kernel_eval(k, a, b, z, z) == pytest.approx(kernel_eval(k, a, b), rel=1e-12, abs=1e-300)


def test_corrected_analytic_value():
    k = Kernel(1.0, 1.0)
    S = 0.5 * np.eye(2)
    assert corrected_kernel_eval(k, (0, 0), (0, 0), S, S) == pytest.approx(0.5, abs=1e-15)


def test_corrected_matches_monte_carlo():
    k = Kernel(1.0, 1.0)
    S = 0.1 * np.eye(2)
    val = corrected_kernel_eval(k, (0, 0), (1, 0), S, S)
    assert abs(val - MC_CORRECTED) < 3 * MC_CORRECTED_SE


def test_corrected_rejects_non_psd():
    k = Kernel()
    with pytest.raises(ValueError, match="semidefinite"):
        corrected_kernel_eval(k, (0, 0), (1, 0), np.diag([1.0, -1.0]), np.zeros((2, 2)))
    with pytest.raises(ValueError, match="symmetric"):
        corrected_kernel_eval(k, (0, 0), (1, 0), np.array([[1.0, 0.5], [0.0, 1.0]]), np.zeros((2, 2)))


def test_prior_model():
    m = prior(Kernel(0.2, 2.5))
    p = m.predict([(0.5, 0.5), (3.0, -1.0)])
    np.testing.assert_array_equal(p.mean, 0.0)
    np.testing.assert_array_equal(p.variance, 2.5)


def test_single_noiseless_point_interpolates():
    m = fit(Kernel(0.3, 1.0, 0.0), [(0.2, 0.4)], [1.7])
    p = m.predict([(0.2, 0.4)])
    assert p.mean[0] == pytest.approx(1.7, abs=1e-12)
    assert p.variance[0] == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_fit_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    k = Kernel(0.2, 1.5, 0.05)
    X = rng.uniform(0, 1, (50, 2))
    y = rng.normal(size=50)
    Q = np.vstack([rng.uniform(0, 1, (15, 2)), X[:5]])
    mean, var = dense_oracle(k, X, y, Q)
    p = fit(k, X, y).predict(Q)
    np.testing.assert_allclose(p.mean, mean, atol=1e-8)
    np.testing.assert_allclose(p.variance, var, atol=1e-8)


def test_standardized_fit_matches_oracle_in_target_units():
    rng = np.random.default_rng(3)
    k = Kernel(0.2, 1.0, 0.05)
    X = rng.uniform(0, 1, (20, 2))
    y = 4.0 + 3.0 * rng.normal(size=20)
    Q = rng.uniform(0, 1, (10, 2))
    m = fit(k, X, y, standardize=True)
    mu, s = y.mean(), y.std()
    mean, var = dense_oracle(k, X, (y - mu) / s, Q)
    p = m.predict(Q)
    np.testing.assert_allclose(p.mean, mu + s * mean, atol=1e-8)
    np.testing.assert_allclose(p.variance, s**2 * var, atol=1e-8)


def test_scale_floor_bounds_standardization():
    m = fit(Kernel(), [(0.1, 0.1), (0.9, 0.9)], [10.0, 10.0 + 1e-6], standardize=True, scale_floor=0.5)
    assert m.y_scale == pytest.approx(5.0)


def test_far_query_reverts_to_prior_variance():
    m = fit(Kernel(0.1, 2.0, 0.01), [(0.0, 0.0), (0.1, 0.0)], [1.0, 2.0])
    p = m.predict([(50.0, 50.0)])
    assert abs(p.variance[0] - 2.0) < 1e-6
    assert abs(p.mean[0]) < 1e-6


def test_predict_cov_diagonal_matches_predict():
    rng = np.random.default_rng(0)
    m = fit(Kernel(0.3), rng.uniform(0, 1, (12, 2)), rng.normal(size=12), standardize=True)
    Q = rng.uniform(0, 1, (7, 2))
    mean, cov = m.predict_cov(Q)
    p = m.predict(Q)
    np.testing.assert_allclose(mean, p.mean, atol=1e-12)
    np.testing.assert_allclose(np.diag(cov), p.variance, atol=1e-10)


def test_input_noise_gram_uses_expected_kernel_off_diagonal():
    k = Kernel(0.3, 1.0, 0.0)
    S = 0.01 * np.eye(2)
    X = np.array([[0.1, 0.2], [0.5, 0.5], [0.8, 0.1]])
    m = fit(k, X, [1.0, 2.0, 3.0], input_noise=S)
    K = m.chol @ m.chol.T - m.jitter * np.eye(3)
    for i in range(3):
        assert K[i, i] == pytest.approx(1.0)
        for j in range(3):
            if i != j:
                assert K[i, j] == pytest.approx(corrected_kernel_eval(k, X[i], X[j], S, S), abs=1e-12)
    # queries are noise-free, so they see one noise covariance, not two
    q = np.array([[0.3, 0.3]])
    z = np.zeros((2, 2))
    assert m.cross_cov(q)[0, 1] == pytest.approx(corrected_kernel_eval(k, q[0], X[1], z, S), abs=1e-12)


def test_duplicate_noiseless_points_use_jitter():
    m = fit(Kernel(0.3, 1.0, 0.0), [(0.5, 0.5), (0.5, 0.5)], [1.0, 1.0])
    assert m.jitter > 0
    assert m.predict([(0.5, 0.5)]).mean[0] == pytest.approx(1.0, abs=1e-4)


def test_factorization_failure_names_jitter():
    K = np.array([[1.0, 2.0], [2.0, 1.0]])  # indefinite
    with pytest.raises(FactorizationError, match="jitter"):
        _cholesky_with_jitter(K, 1.0)


def test_variance_clamp_policy():
    np.testing.assert_array_equal(_clamp_variance(np.array([-1e-12, 0.5]), 1.0), [0.0, 0.5])
    with pytest.raises(FactorizationError):
        _clamp_variance(np.array([-1e-6]), 1.0)


def test_mismatched_lengths():
    with pytest.raises(ValueError):
        fit(Kernel(), [(0, 0), (1, 1)], [1.0])


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 15))
def test_posterior_variance_below_prior(seed, n):
    rng = np.random.default_rng(seed)
    k = Kernel(0.25, 1.7, 0.02)
    m = fit(k, rng.uniform(0, 1, (n, 2)), rng.normal(size=n))
    v = m.predict(rng.uniform(-0.5, 1.5, (30, 2))).variance
    assert np.all(v <= k.signal_variance + 1e-9)
    assert np.all(v >= 0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(0, 12))
def test_adding_observation_never_increases_variance(seed, n):
    rng = np.random.default_rng(seed)
    k = Kernel(0.25, 1.0, 0.01)
    X = rng.uniform(0, 1, (n + 1, 2))
    y = rng.normal(size=n + 1)
    Q = rng.uniform(0, 1, (25, 2))
    before = fit(k, X[:n], y[:n]).predict(Q).variance
    after = fit(k, X, y).predict(Q).variance
    assert np.all(after <= before + 1e-9)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 10))
def test_noiseless_fit_reproduces_targets(seed, n):
    rng = np.random.default_rng(seed)
    # well-separated points keep the noiseless Gram matrix well conditioned
    X = rng.permutation(np.array([(i, j) for i in range(4) for j in range(4)], dtype=float) / 3)[:n]
    y = rng.normal(size=n)
    m = fit(Kernel(0.2, 1.0, 0.0), X, y)
    np.testing.assert_allclose(m.predict(X).mean, y, atol=1e-8)
