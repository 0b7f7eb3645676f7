"""Cross-entropy optimization with a Gaussian-mixture sampling distribution."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.special import logsumexp


class AllInfeasibleError(RuntimeError):
    """Every sample in a CE iteration had infinite cost."""


@dataclass(frozen=True)
class GmmParams:
    means: np.ndarray  # (K, d)
    covs: np.ndarray  # (K, d, d)
    weights: np.ndarray  # (K,)

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, dtype=float))
        covs = np.asarray(self.covs, dtype=float).reshape(len(means), means.shape[1], means.shape[1])
        weights = np.asarray(self.weights, dtype=float).reshape(len(means))
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
            raise ValueError(f"mixture weights must be non-negative and sum to 1, got {weights}")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", covs)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def single(cls, mean, cov):
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if cov.ndim == 1:
            cov = np.diag(cov)
        return cls(mean[None], cov[None], np.ones(1))

    @property
    def K(self):
        return len(self.weights)

    @property
    def dim(self):
        return self.means.shape[1]

    def max_eigenvalue(self):
        return float(max(np.linalg.eigvalsh(c).max() for c in self.covs))


@dataclass(frozen=True)
class CemConfig:
    n_samples: int = 200
    elite_frac: float = 0.1
    max_iters: int = 30
    min_covariance_floor: float = 1e-6
    convergence_tol: float = 1e-4
    seed: int = 0
    n_components: int = 1
    em_steps: int = 20
    # Weight of the fresh elite fit when blending with the previous mixture;
    # 1 disables smoothing.
    smoothing: float = 0.7

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if not 0 < self.elite_frac < 1:
            raise ValueError("elite_frac must lie in (0, 1)")
        if self.n_samples * self.elite_frac < 2:
            raise ValueError("n_samples * elite_frac must be at least 2")
        if self.max_iters < 1:
            raise ValueError("max_iters must be positive")
        if not 0 < self.smoothing <= 1:
            raise ValueError("smoothing must lie in (0, 1]")

    @property
    def n_elite(self):
        return math.ceil(self.elite_frac * self.n_samples)


def sample(gmm: GmmParams, n: int, rng) -> np.ndarray:
    """Draw ``n`` vectors: component by weight, then from its Gaussian."""
    rng = np.random.default_rng(rng)
    comp = rng.choice(gmm.K, size=n, p=gmm.weights)
    eps = rng.standard_normal((n, gmm.dim))
    out = np.empty((n, gmm.dim))
    for k in range(gmm.K):
        sel = comp == k
        if not sel.any():
            continue
        L = _chol(gmm.covs[k])
        out[sel] = gmm.means[k] + eps[sel] @ L.T
    return out


def _chol(cov):
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        w, V = np.linalg.eigh(cov)
        return V * np.sqrt(np.maximum(w, 0.0))


def _log_gauss(X, mean, cov):
    d = X.shape[1]
    L = _chol(cov)
    diff = np.linalg.solve(L, (X - mean).T)
    logdet = 2 * np.log(np.abs(np.diag(L))).sum()
    return -0.5 * (np.einsum("ij,ij->j", diff, diff) + logdet + d * np.log(2 * np.pi))


def _kmeans_pp(X, K, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, K):
        d2 = np.min([np.sum((X - c) ** 2, axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.array(centers)


def fit_gmm(X, K, floor, em_steps=20, rng=None):
    """Maximum-likelihood GMM by EM with a covariance floor on every component.

    For ``K == 1`` this is the sample mean and (biased) sample covariance.
    """
    X = np.asarray(X, dtype=float)
    n, d = X.shape
    eye = np.eye(d)
    if K == 1 or n <= K:
        mean = X.mean(axis=0)
        diff = X - mean
        cov = diff.T @ diff / n + floor * eye
        if K == 1:
            return GmmParams(mean[None], cov[None], np.ones(1))
        return GmmParams(np.repeat(mean[None], K, 0), np.repeat(cov[None], K, 0), np.full(K, 1 / K))

    rng = np.random.default_rng(rng)
    means = _kmeans_pp(X, K, rng)
    labels = np.argmin(((X[:, None, :] - means[None]) ** 2).sum(-1), axis=1)
    resp = np.eye(K)[labels]
    for _ in range(em_steps):
        # M step
        nk = resp.sum(axis=0) + 1e-12
        weights = nk / nk.sum()
        means = (resp.T @ X) / nk[:, None]
        covs = np.empty((K, d, d))
        for k in range(K):
            diff = X - means[k]
            covs[k] = (resp[:, k, None] * diff).T @ diff / nk[k] + floor * eye
        # E step
        logp = np.column_stack([np.log(weights[k]) + _log_gauss(X, means[k], covs[k]) for k in range(K)])
        new_resp = np.exp(logp - logsumexp(logp, axis=1, keepdims=True))
        if np.allclose(new_resp, resp, atol=1e-10):
            break
        resp = new_resp
    weights = weights / weights.sum()
    return GmmParams(means, covs, weights)


def select_elites(samples, costs, n_elite):
    samples = np.asarray(samples, dtype=float)
    costs = np.asarray(costs, dtype=float)
    if len(samples) != len(costs):
        raise ValueError(f"{len(samples)} samples but {len(costs)} costs")
    finite = np.flatnonzero(np.isfinite(costs))
    if len(finite) == 0:
        raise AllInfeasibleError(
            "all sampled candidates are infeasible (infinite cost); widen the sampling "
            "distribution or relax the constraints"
        )
    order = finite[np.argsort(costs[finite], kind="stable")]
    return samples[order[:n_elite]]


def elite_update(samples, costs, config: CemConfig, K: int | None = None, rng=None) -> GmmParams:
    """Refit the sampling mixture to the lowest-cost ``ceil(elite_frac * n)`` samples.

    Infinite-cost samples never enter the elite set.
    """
    K = config.n_components if K is None else K
    elites = select_elites(samples, costs, config.n_elite)
    return fit_gmm(elites, K, config.min_covariance_floor, config.em_steps,
                   rng if rng is not None else config.seed)


def smooth(old: GmmParams, new: GmmParams, a: float) -> GmmParams:
    """Blend ``a * new + (1 - a) * old`` component-wise.

    Components are paired by nearest means first, since EM returns them in
    arbitrary order.
    """
    if a >= 1 or old.K != new.K:
        return new
    if old.K > 1:
        d2 = ((old.means[:, None, :] - new.means[None]) ** 2).sum(-1)
        _, perm = linear_sum_assignment(d2)
        new = GmmParams(new.means[perm], new.covs[perm], new.weights[perm])
    w = a * new.weights + (1 - a) * old.weights
    return GmmParams(
        a * new.means + (1 - a) * old.means,
        a * new.covs + (1 - a) * old.covs,
        w / w.sum(),
    )


@dataclass
class CemResult:
    best: np.ndarray
    best_cost: float
    trace: list = field(default_factory=list)  # per-iteration dicts
    gmm: GmmParams | None = None

    @property
    def best_costs(self):
        return [t["best_cost"] for t in self.trace]


def optimize(cost, gmm0: GmmParams, config: CemConfig, project=None, vectorized=False,
             K: int | None = None) -> CemResult:
    """Minimize ``cost`` by the cross-entropy method.

    Args:
        cost: maps a parameter vector to a real (``+inf`` marks infeasible).
            With ``vectorized`` it maps an (n, d) batch to (n,) costs.
        gmm0: initial sampling mixture.
        config: sample counts, elite fraction, stopping rules and seed.
        project: optional map applied to each sample batch before evaluation,
            e.g. clipping into box bounds.
        K: number of mixture components refit from the elites; defaults to
            ``gmm0.K``.

    Each iteration refits the mixture to the elites and blends it with the
    previous one by ``config.smoothing``, which keeps the covariance from
    collapsing before the mean has settled. Returns the best sample ever
    evaluated together with a per-iteration trace. Stops early once the widest mixture component has collapsed below
    ``convergence_tol``.
    """
    rng = np.random.default_rng(config.seed)
    gmm = gmm0
    K = gmm0.K if K is None else K
    best, best_cost = None, math.inf
    trace = []
    for it in range(config.max_iters):
        Z = sample(gmm, config.n_samples, rng)
        if project is not None:
            Z = project(Z)
        if vectorized:
            J = np.asarray(cost(Z), dtype=float)
        else:
            J = np.array([cost(z) for z in Z], dtype=float)
        J = np.where(np.isnan(J), np.inf, J)
        i = int(np.argmin(J))
        if J[i] < best_cost or best is None:
            best, best_cost = Z[i].copy(), float(J[i])
        gmm = smooth(gmm, elite_update(Z, J, config, K, rng), config.smoothing)
        spread = gmm.max_eigenvalue()
        trace.append({
            "iteration": it,
            "best_cost": best_cost,
            "iter_min_cost": float(J[i]),
            "n_feasible": int(np.isfinite(J).sum()),
            "max_eigenvalue": spread,
        })
        if spread < config.convergence_tol:
            break
    return CemResult(best, best_cost, trace, gmm)
