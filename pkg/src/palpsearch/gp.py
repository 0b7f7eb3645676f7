"""Gaussian-process regression over a 2-D domain.

Squared-exponential kernel with fixed hyperparameters, optional Gaussian
input noise folded into the covariance (expected-kernel correction), and a
Cholesky factorization with an escalating jitter fallback.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

# Jitter ladder, relative to the signal variance.
JITTER_START = 1e-10
JITTER_STOP = 1e-4
# Negative posterior variances down to this (relative to signal variance)
# are treated as round-off and clamped to zero.
VARIANCE_CLAMP_TOL = 1e-9


class FactorizationError(np.linalg.LinAlgError):
    """Raised when the Gram matrix cannot be factored even with jitter."""


@dataclass(frozen=True)
class Kernel:
    """Squared-exponential covariance with additive observation noise."""

    lengthscale: float = 0.1
    signal_variance: float = 1.0
    noise_variance: float = 0.01

    def __post_init__(self):
        if not self.lengthscale > 0:
            raise ValueError(f"lengthscale must be positive, got {self.lengthscale}")
        if not self.signal_variance > 0:
            raise ValueError(f"signal_variance must be positive, got {self.signal_variance}")
        if not self.noise_variance >= 0:
            raise ValueError(f"noise_variance must be non-negative, got {self.noise_variance}")

    def __call__(self, a, b):
        """Cross-covariance matrix between point sets ``a`` (n, 2) and ``b`` (m, 2)."""
        a = np.atleast_2d(np.asarray(a, dtype=float))
        b = np.atleast_2d(np.asarray(b, dtype=float))
        return self.signal_variance * np.exp(-0.5 * _sqdist(a, b) / self.lengthscale**2)


def _sqdist(a, b):
    dx = a[:, 0, None] - b[None, :, 0]
    dy = a[:, 1, None] - b[None, :, 1]
    return dx * dx + dy * dy


def kernel_eval(kernel: Kernel, x1, x2) -> float:
    """Squared-exponential covariance between two single points."""
    d = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    return float(kernel.signal_variance * np.exp(-0.5 * (d @ d) / kernel.lengthscale**2))


def _check_psd(S, name):
    S = np.asarray(S, dtype=float)
    if S.shape[-2:] != (2, 2):
        raise ValueError(f"{name} must be 2x2, got shape {S.shape}")
    if not np.allclose(S, np.swapaxes(S, -1, -2), atol=1e-12):
        raise ValueError(f"{name} is not symmetric")
    eig = np.linalg.eigvalsh(S)
    if np.any(eig < -1e-12):
        raise ValueError(f"{name} is not positive semidefinite (min eigenvalue {eig.min():.3g})")
    return S


def corrected_kernel_eval(kernel: Kernel, x1, x2, S1, S2) -> float:
    """Expected squared-exponential covariance when both inputs carry Gaussian noise.

    With ``L = lengthscale**2 * I`` the value is
    ``sf2 * det(I + L^-1 (S1 + S2))^(-1/2) * exp(-0.5 d^T (L + S1 + S2)^-1 d)``,
    which is exactly :func:`kernel_eval` when both covariances vanish.
    """
    S = _check_psd(S1, "S1") + _check_psd(S2, "S2")
    d = np.asarray(x1, dtype=float) - np.asarray(x2, dtype=float)
    ell2 = kernel.lengthscale**2
    M = ell2 * np.eye(2) + S
    det = np.linalg.det(np.eye(2) + S / ell2)
    quad = d @ np.linalg.solve(M, d)
    return float(kernel.signal_variance * np.exp(-0.5 * quad) / np.sqrt(det))


def _corrected_cross(kernel: Kernel, a, Sa, b, Sb):
    """Vectorized expected kernel between noisy point sets.

    ``Sa`` is (n, 2, 2) and ``Sb`` is (m, 2, 2).
    """
    ell2 = kernel.lengthscale**2
    S = Sa[:, None, :, :] + Sb[None, :, :, :]
    M = ell2 * np.eye(2) + S
    # closed-form 2x2 inverse and determinant
    det_M = M[..., 0, 0] * M[..., 1, 1] - M[..., 0, 1] * M[..., 1, 0]
    d = a[:, None, :] - b[None, :, :]
    quad = (
        M[..., 1, 1] * d[..., 0] ** 2
        - (M[..., 0, 1] + M[..., 1, 0]) * d[..., 0] * d[..., 1]
        + M[..., 0, 0] * d[..., 1] ** 2
    ) / det_M
    det_ratio = det_M / ell2**2
    return kernel.signal_variance * np.exp(-0.5 * quad) / np.sqrt(det_ratio)


@dataclass(frozen=True)
class Prediction:
    """Pointwise posterior marginals, in target units."""

    mean: np.ndarray
    variance: np.ndarray

    @property
    def std(self):
        return np.sqrt(self.variance)


@dataclass(frozen=True, eq=False)
class GpModel:
    """A fitted GP posterior. Build with :func:`fit`; immutable afterwards."""

    kernel: Kernel
    train_inputs: np.ndarray
    train_targets: np.ndarray
    input_noise: np.ndarray | None
    chol: np.ndarray
    alpha: np.ndarray
    jitter: float = 0.0
    y_offset: float = 0.0
    y_scale: float = 1.0
    standardized: bool = False

    @property
    def n(self):
        return len(self.train_targets)

    def cross_cov(self, queries):
        """Covariance between noise-free ``queries`` and the training inputs (m, n)."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        if self.n == 0:
            return np.zeros((len(queries), 0))
        if self.input_noise is None:
            return self.kernel(queries, self.train_inputs)
        zeros = np.zeros((len(queries), 2, 2))
        return _corrected_cross(self.kernel, queries, zeros, self.train_inputs, self.input_noise)

    def _whiten(self, Ks):
        if self.n == 0:
            return np.zeros((0, Ks.shape[0]))
        return solve_triangular(self.chol, Ks.T, lower=True)

    def predict(self, queries) -> Prediction:
        """Posterior mean and variance of the latent field at ``queries``."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        Ks = self.cross_cov(queries)
        mean = Ks @ self.alpha if self.n else np.zeros(len(queries))
        V = self._whiten(Ks)
        var = self.kernel.signal_variance - np.einsum("ij,ij->j", V, V)
        var = _clamp_variance(var, self.kernel.signal_variance)
        return Prediction(
            mean=self.y_offset + self.y_scale * mean,
            variance=self.y_scale**2 * var,
        )

    def whitened(self, queries):
        """``(mean, V)`` in standardized units, with ``V = L^-1 K*^T`` of shape (n, m).

        The posterior covariance at ``queries`` is ``prior - V^T V`` (times
        ``y_scale**2``); callers with cached prior blocks use this to avoid
        forming the full matrix.
        """
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        Ks = self.cross_cov(queries)
        mean = Ks @ self.alpha if self.n else np.zeros(len(queries))
        return mean, self._whiten(Ks)

    def predict_cov(self, queries):
        """Posterior mean vector and full covariance matrix at ``queries``."""
        queries = np.atleast_2d(np.asarray(queries, dtype=float))
        Ks = self.cross_cov(queries)
        mean = Ks @ self.alpha if self.n else np.zeros(len(queries))
        V = self._whiten(Ks)
        cov = self.kernel(queries, queries) - V.T @ V
        return self.y_offset + self.y_scale * mean, self.y_scale**2 * cov


def _clamp_variance(var, signal_variance):
    tol = VARIANCE_CLAMP_TOL * signal_variance
    if np.any(var < -tol):
        raise FactorizationError(
            f"posterior variance {var.min():.3g} is negative beyond round-off; "
            "the factorization is broken"
        )
    return np.maximum(var, 0.0)


def _cholesky_with_jitter(K, signal_variance):
    try:
        return np.linalg.cholesky(K), 0.0
    except np.linalg.LinAlgError:
        pass
    jitter = JITTER_START
    eye = np.eye(len(K))
    while jitter <= JITTER_STOP * (1 + 1e-9):
        try:
            return np.linalg.cholesky(K + jitter * signal_variance * eye), jitter * signal_variance
        except np.linalg.LinAlgError:
            jitter *= 10
    raise FactorizationError(
        f"Gram matrix is not positive definite; jitter fallback tried "
        f"{JITTER_START:g} to {JITTER_STOP:g} x signal_variance without success"
    )


def _as_noise(input_noise, n):
    if input_noise is None:
        return None
    S = np.asarray(input_noise, dtype=float)
    if S.shape == (2, 2):
        S = np.broadcast_to(S, (n, 2, 2)).copy()
    if S.shape != (n, 2, 2):
        raise ValueError(f"input_noise must be (2, 2) or ({n}, 2, 2), got {S.shape}")
    _check_psd(S, "input_noise")
    if not np.any(S):
        return None
    return S


def fit(kernel: Kernel, points, targets, input_noise=None, standardize=False,
        scale_floor=0.0) -> GpModel:
    """Condition a zero-mean GP on ``targets`` observed at ``points``.

    Args:
        kernel: fixed hyperparameters.
        points: (n, 2) training inputs; may be empty.
        targets: (n,) observations.
        input_noise: optional (2, 2) or (n, 2, 2) covariance of each input
            location. When given, off-diagonal Gram entries and training
            cross-covariances use the expected kernel.
        standardize: subtract the target mean and divide by the target
            standard deviation before conditioning; predictions are mapped
            back to target units.
        scale_floor: lower bound on the standardization scale as a fraction
            of ``|mean|``, so a handful of near-identical targets does not
            shrink the prior to nothing.
    """
    X = np.asarray(points, dtype=float).reshape(-1, 2)
    y = np.asarray(targets, dtype=float).reshape(-1)
    if len(X) != len(y):
        raise ValueError(f"{len(X)} points but {len(y)} targets")
    n = len(y)
    S = _as_noise(input_noise, n)

    offset, scale = 0.0, 1.0
    if standardize and n > 0:
        offset = float(y.mean())
        sd = max(float(y.std()), scale_floor * abs(offset))
        scale = sd if sd > 0 else 1.0
    z = (y - offset) / scale

    if n == 0:
        return GpModel(kernel, X, y, S, np.zeros((0, 0)), np.zeros(0),
                       y_offset=offset, y_scale=scale, standardized=standardize)

    if S is None:
        K = kernel(X, X)
    else:
        K = _corrected_cross(kernel, X, S, X, S)
        np.fill_diagonal(K, kernel.signal_variance)
    K[np.diag_indices(n)] += kernel.noise_variance
    L, jitter = _cholesky_with_jitter(K, kernel.signal_variance)
    alpha = cho_solve((L, True), z)
    return GpModel(kernel, X, y, S, L, alpha, jitter=jitter,
                   y_offset=offset, y_scale=scale, standardized=standardize)


def prior(kernel: Kernel) -> GpModel:
    return fit(kernel, np.zeros((0, 2)), np.zeros(0))
