"""Acquisition fields over a DomainGrid: active area search, level-set
estimation, uncertainty sampling and expected improvement.

Fields are returned as ``(ny, nx)`` arrays aligned with the grid.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.stats import norm

from .gp import GpModel
from .grids import DomainGrid, RegionGrid

__all__ = [
    "DomainGrid",
    "RegionGrid",
    "LseState",
    "region_posterior",
    "region_posteriors",
    "aas_field",
    "lse_update_and_field",
    "unc_field",
    "ei_field",
    "classify_regions",
    "normalize",
]

# Finite stand-in for an unbounded confidence interval.
INTERVAL_SENTINEL = 1e12


def region_posterior(model: GpModel, region, grid: DomainGrid):
    """Posterior mean and variance of the average of the field over ``region``.

    The region average is the uniform mean over the grid cells whose centres
    fall inside the rectangle, so its variance is ``w^T Sigma w``.
    """
    rg = RegionGrid((tuple(region),))
    w = rg.weights(grid)[0]
    idx = np.flatnonzero(w)
    mean, cov = model.predict_cov(grid.centers[idx])
    wi = w[idx]
    return float(wi @ mean), float(max(wi @ cov @ wi, 0.0))


@lru_cache(maxsize=16)
def _prior_blocks(kernel, grid, regions):
    """Data-independent pieces: weights W, W K, and diag(W K W^T)."""
    W = RegionGrid(regions).weights(grid)
    WK = W @ kernel(grid.centers, grid.centers)
    return W, WK, np.einsum("gi,gi->g", WK, W)


def _region_terms(model: GpModel, regions: RegionGrid, grid: DomainGrid):
    W, WK, wkw = _prior_blocks(model.kernel, grid, regions.regions)
    mean, V = model.whitened(grid.centers)
    VW = V @ W.T
    s2 = model.y_scale**2
    m_g = model.y_offset + model.y_scale * (W @ mean)
    var_g = np.maximum(s2 * (wkw - np.einsum("ng,ng->g", VW, VW)), 0.0)
    return m_g, var_g, W, WK, V, VW, mean


def region_posteriors(model: GpModel, regions: RegionGrid, grid: DomainGrid):
    """Region means and variances for every region in ``regions`` at once."""
    m_g, var_g, *_ = _region_terms(model, regions, grid)
    return m_g, var_g


def _prob_above(mean, var, tau):
    sd = np.sqrt(var)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = norm.cdf((mean - tau) / sd)
    return np.where(sd > 0, p, (mean > tau).astype(float))


def classify_regions(model: GpModel, regions: RegionGrid, grid: DomainGrid):
    """Label each region as a region of interest when ``P(f_g > tau) > theta``."""
    m, v = region_posteriors(model, regions, grid)
    return _prob_above(m, v, regions.threshold()) > regions.confidence


def aas_field(model: GpModel, regions: RegionGrid, grid: DomainGrid):
    """Expected number of regions classified positive after one more observation.

    For a candidate ``x`` the hypothetical observation ``y ~ N(mu(x), s2(x) + noise)``
    shifts the region mean linearly in ``y`` while the region variance drops
    by a ``y``-independent amount, so the chance that the updated region
    clears the confidence bar is a single normal CDF. Regions that are
    already classified positive keep their reward of 1 whatever ``x`` is.
    """
    tau = regions.threshold()
    z_theta = norm.ppf(regions.confidence)
    m_g, s2_g, W, WK, V, VW, _ = _region_terms(model, regions, grid)
    scale2 = model.y_scale**2
    C = scale2 * (WK - VW.T @ V)  # Cov(f_g, f(x)), shape (G, N)
    var_x = scale2 * np.maximum(model.kernel.signal_variance - np.einsum("ij,ij->j", V, V), 0.0)
    obs_var = var_x + model.kernel.noise_variance * scale2

    claimed = _prob_above(m_g, s2_g, tau) > regions.confidence

    with np.errstate(divide="ignore", invalid="ignore"):
        gain = np.where(obs_var > 0, C**2 / obs_var, 0.0)
        s_post = np.sqrt(np.maximum(s2_g[:, None] - gain, 0.0))
        shift_sd = np.sqrt(gain)
        margin = m_g[:, None] - tau - s_post * z_theta
        reward = np.where(shift_sd > 0, norm.cdf(margin / shift_sd), (margin > 0).astype(float))
    reward[claimed] = 1.0
    return reward.sum(axis=0).reshape(grid.shape)


@dataclass
class LseState:
    """Running confidence region of the level-set classifier.

    ``lo``/``hi`` hold the intersection of all confidence intervals seen so
    far at each grid point; ``resets`` counts points whose new interval was
    disjoint from the running one.
    """

    level: float = 0.0
    beta: float = 9.0
    lo: np.ndarray | None = None
    hi: np.ndarray | None = None
    resets: int = 0

    def initialize(self, grid: DomainGrid):
        self.lo = np.full(grid.size, -INTERVAL_SENTINEL)
        self.hi = np.full(grid.size, INTERVAL_SENTINEL)
        return self


def lse_update_and_field(model: GpModel, state: LseState, grid: DomainGrid):
    """Intersect the new confidence intervals into ``state`` and return the ambiguity.

    Ambiguity is ``min(hi - h, h - lo)``; negative values mark points that are
    already classified on one side of the level ``h``.
    """
    if state.lo is None:
        state.initialize(grid)
    pred = model.predict(grid.centers)
    half = np.sqrt(state.beta) * pred.std
    q_lo = pred.mean - half
    q_hi = pred.mean + half
    lo = np.maximum(state.lo, q_lo)
    hi = np.minimum(state.hi, q_hi)
    empty = lo > hi
    if np.any(empty):
        lo[empty] = q_lo[empty]
        hi[empty] = q_hi[empty]
        state.resets += int(empty.sum())
    state.lo, state.hi = lo, hi
    h = state.level
    return np.minimum(hi - h, h - lo).reshape(grid.shape)


def unc_field(model: GpModel, grid: DomainGrid):
    """Posterior variance at every cell."""
    return model.predict(grid.centers).variance.reshape(grid.shape)


def expected_improvement(mean, std, incumbent):
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    diff = mean - incumbent
    with np.errstate(divide="ignore", invalid="ignore"):
        z = diff / std
        ei = diff * norm.cdf(z) + std * norm.pdf(z)
    return np.where(std > 0, ei, 0.0)


def ei_field(model: GpModel, grid: DomainGrid, incumbent: float):
    """Expected improvement over ``incumbent`` (the best observed value)."""
    if not np.isfinite(incumbent):
        raise ValueError(f"incumbent must be finite, got {incumbent}")
    pred = model.predict(grid.centers)
    return expected_improvement(pred.mean, pred.std, incumbent).reshape(grid.shape)


def normalize(values, shift=False):
    """Scale a raw field into [0, 1].

    With ``shift`` the minimum is subtracted first (for fields that can be
    negative), so a constant field maps to zeros. Without it negative values
    are floored at zero and an all-zero field stays zero.
    """
    v = np.asarray(values, dtype=float)
    if shift:
        v = v - v.min()
    else:
        v = np.maximum(v, 0.0)
    top = v.max()
    if not top > 0:
        return np.zeros_like(v)
    return v / top
