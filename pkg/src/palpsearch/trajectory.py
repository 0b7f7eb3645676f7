"""Dubins-car trajectories built from constant-control motion primitives.

A trajectory is ``m`` primitives of equal duration ``tau``, each holding a
forward speed ``v`` and turn rate ``w`` constant. Rollouts are closed form:
straight segments when ``w == 0`` and circular arcs of radius ``v / w``
otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def as_array(self):
        return np.array([self.x, self.y, self.theta])

    @classmethod
    def from_array(cls, a):
        return cls(float(a[0]), float(a[1]), float(a[2]))

    def same_as(self, other, tol=1e-9):
        """Positions within ``tol`` and headings equal modulo 2*pi."""
        dth = math.remainder(self.theta - other.theta, 2 * math.pi)
        return abs(self.x - other.x) <= tol and abs(self.y - other.y) <= tol and abs(dth) <= tol


@dataclass(frozen=True)
class PrimitiveParams:
    """``m`` (speed, turn-rate) pairs, each applied for ``tau`` seconds."""

    pairs: np.ndarray
    tau: float
    v_bounds: tuple = (0.0, 1.0)
    w_bounds: tuple = (-math.pi, math.pi)

    def __post_init__(self):
        pairs = np.asarray(self.pairs, dtype=float).reshape(-1, 2)
        if len(pairs) < 1:
            raise ValueError("need at least one primitive")
        if not self.tau > 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        object.__setattr__(self, "pairs", pairs)

    @classmethod
    def from_vector(cls, z, tau, v_bounds=(0.0, 1.0), w_bounds=(-math.pi, math.pi)):
        return cls(np.asarray(z, dtype=float).reshape(-1, 2), tau, tuple(v_bounds), tuple(w_bounds))

    @property
    def m(self):
        return len(self.pairs)

    @property
    def vector(self):
        """Flattened ``(v1, w1, ..., vm, wm)``."""
        return self.pairs.ravel().copy()

    def in_bounds(self):
        v, w = self.pairs[:, 0], self.pairs[:, 1]
        return bool(
            np.all((v >= self.v_bounds[0]) & (v <= self.v_bounds[1]))
            and np.all((w >= self.w_bounds[0]) & (w <= self.w_bounds[1]))
        )


@dataclass(frozen=True)
class Path:
    poses: np.ndarray  # (T, 3) rows of x, y, theta
    times: np.ndarray  # (T,)

    @property
    def positions(self):
        return self.poses[:, :2]

    @property
    def end(self):
        return Pose.from_array(self.poses[-1])

    def __len__(self):
        return len(self.times)


def lower_bounds(m, v_bounds, w_bounds):
    return np.tile([v_bounds[0], w_bounds[0]], m)


def upper_bounds(m, v_bounds, w_bounds):
    return np.tile([v_bounds[1], w_bounds[1]], m)


def clamp(params: PrimitiveParams) -> PrimitiveParams:
    """Clip every (v, w) into its bounds."""
    v = np.clip(params.pairs[:, 0], *params.v_bounds)
    w = np.clip(params.pairs[:, 1], *params.w_bounds)
    return PrimitiveParams(np.column_stack([v, w]), params.tau, params.v_bounds, params.w_bounds)


def clamp_vectors(Z, m, v_bounds, w_bounds):
    """Vectorized :func:`clamp` for flattened parameter vectors (..., 2m)."""
    return np.clip(Z, lower_bounds(m, v_bounds, w_bounds), upper_bounds(m, v_bounds, w_bounds))


def sample_offsets(tau, dt):
    """Sample times inside one primitive, ending exactly at ``tau``."""
    if not 0 < dt <= tau:
        raise ValueError(f"need 0 < dt <= tau, got dt={dt}, tau={tau}")
    k = max(1, math.ceil(tau / dt - 1e-9))
    return np.append(np.arange(1, k) * dt, tau)


def rollout_batch(q0, Z, tau, dt):
    """Roll out a batch of flattened parameter vectors from a common start.

    Args:
        q0: start pose as ``(x, y, theta)``.
        Z: (B, 2m) parameter vectors.
        tau: primitive duration.
        dt: sampling step (``dt <= tau``).

    Returns:
        ``(poses, times)`` with poses of shape (B, 1 + m*k, 3).
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    B, n2 = Z.shape
    m = n2 // 2
    offs = sample_offsets(tau, dt)
    k = len(offs)
    poses = np.empty((B, 1 + m * k, 3))
    start = np.broadcast_to(np.asarray(q0, dtype=float), (B, 3))
    poses[:, 0] = start
    x, y, th = start[:, 0].copy(), start[:, 1].copy(), start[:, 2].copy()
    straight_below = 1e-8 / tau
    for j in range(m):
        v = Z[:, 2 * j][:, None]
        w = Z[:, 2 * j + 1][:, None]
        w_arc = np.where(np.abs(w) < straight_below, 0.0, w)
        phi = w_arc * offs
        # (v/w)(sin(th+phi) - sin th) == v*t*cos(th+phi/2)*sinc(phi/2), stable as w -> 0
        chord = v * offs * np.sinc(phi / (2 * np.pi))
        mid = th[:, None] + 0.5 * phi
        seg = slice(1 + j * k, 1 + (j + 1) * k)
        poses[:, seg, 0] = x[:, None] + chord * np.cos(mid)
        poses[:, seg, 1] = y[:, None] + chord * np.sin(mid)
        poses[:, seg, 2] = th[:, None] + w[:, :] * offs
        x, y, th = poses[:, seg.stop - 1, 0], poses[:, seg.stop - 1, 1], poses[:, seg.stop - 1, 2]
    times = np.concatenate([[0.0], (np.arange(m)[:, None] * tau + offs).ravel()])
    return poses, times


def rollout(q0: Pose, params: PrimitiveParams, dt: float | None = None) -> Path:
    """Exact Dubins rollout sampled every ``dt`` and at every primitive end.

    ``dt`` defaults to ``tau / 20``.
    """
    dt = params.tau / 20 if dt is None else dt
    poses, times = rollout_batch(q0.as_array(), params.vector[None, :], params.tau, dt)
    return Path(poses[0], times)


def path_length(path: Path) -> float:
    """Sum of chord lengths between consecutive samples."""
    if len(path) < 2:
        raise ValueError("path_length needs at least two poses")
    return float(np.linalg.norm(np.diff(path.positions, axis=0), axis=1).sum())
