"""Discrete and trajectory-optimized continuous palpation loops.

A loop owns a :class:`SearchState`. Each step turns the current GP into an
acquisition field, blends in an optional decaying prior, picks where to
measure next (a grid argmax, or the cross-entropy-optimized Dubins path that
collects the most acquisition), measures through a caller-supplied probe and
refits the GP on everything measured so far.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import acquisition as acq
from . import cem
from .gp import GpModel, Kernel, fit
from .grids import DomainGrid, RegionGrid
from .trajectory import (
    Path,
    Pose,
    PrimitiveParams,
    clamp_vectors,
    lower_bounds,
    rollout,
    rollout_batch,
    upper_bounds,
)

KINDS = ("AAS", "LSE", "UNC", "EI")


class InfeasiblePathError(RuntimeError):
    """An executed trajectory violated the obstacle/domain constraint."""


@dataclass(frozen=True)
class Disc:
    center: tuple
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise ValueError(f"disc obstacle needs a positive radius, got {self.radius}")

    def signed_distance(self, points):
        p = np.asarray(points, dtype=float)
        return np.hypot(p[..., 0] - self.center[0], p[..., 1] - self.center[1]) - self.radius


@dataclass(frozen=True)
class Polygon:
    vertices: tuple  # ((x, y), ...), either orientation

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
            raise ValueError("polygon needs at least three (x, y) vertices")
        area = 0.5 * np.sum(v[:, 0] * np.roll(v[:, 1], -1) - np.roll(v[:, 0], -1) * v[:, 1])
        if abs(area) <= 0:
            raise ValueError("polygon has zero area")
        object.__setattr__(self, "vertices", tuple(map(tuple, v)))

    def signed_distance(self, points):
        """Distance to the boundary, negated for points inside."""
        p = np.asarray(points, dtype=float)
        a = np.asarray(self.vertices)
        b = np.roll(a, -1, axis=0)
        px = p[..., 0][..., None]
        py = p[..., 1][..., None]
        ex, ey = b[:, 0] - a[:, 0], b[:, 1] - a[:, 1]
        t = np.clip(((px - a[:, 0]) * ex + (py - a[:, 1]) * ey) / (ex**2 + ey**2), 0, 1)
        dist = np.hypot(px - (a[:, 0] + t * ex), py - (a[:, 1] + t * ey)).min(axis=-1)
        # even-odd crossing test
        crosses = ((a[:, 1] > py) != (b[:, 1] > py)) & (
            px < a[:, 0] + (py - a[:, 1]) * ex / np.where(ey == 0, np.inf, ey)
        )
        inside = np.count_nonzero(crosses, axis=-1) % 2 == 1
        return np.where(inside, -dist, dist)


@dataclass(frozen=True)
class RobotFootprint:
    radius: float = 0.0

    def __post_init__(self):
        if self.radius < 0:
            raise ValueError(f"footprint radius must be non-negative, got {self.radius}")


def clearance(points, obstacles, footprint: RobotFootprint, bounds=None):
    """Pointwise signed clearance of the footprint at ``points`` (shape (..., 2)).

    ``+inf`` where nothing constrains a point. Leaving ``bounds`` counts as
    negative clearance equal to the distance outside the rectangle.
    """
    p = np.asarray(points, dtype=float)
    out = np.full(p.shape[:-1], np.inf)
    for ob in obstacles:
        out = np.minimum(out, ob.signed_distance(p) - footprint.radius)
    if bounds is not None:
        xmin, xmax, ymin, ymax = bounds
        dx = np.maximum(np.maximum(xmin - p[..., 0], p[..., 0] - xmax), 0)
        dy = np.maximum(np.maximum(ymin - p[..., 1], p[..., 1] - ymax), 0)
        outside = (dx > 0) | (dy > 0)
        out = np.where(outside, np.minimum(out, -np.hypot(dx, dy)), out)
    return out


def prox_constraint(path: Path, obstacles, footprint: RobotFootprint, bounds=None) -> float:
    """Smallest signed clearance along ``path``; negative iff some pose collides."""
    return float(clearance(path.positions, obstacles, footprint, bounds).min())


@dataclass(frozen=True)
class SearchConfig:
    acquisition_kind: str = "AAS"
    grid: DomainGrid = field(default_factory=DomainGrid)
    kernel: Kernel = field(default_factory=Kernel)
    # Floor on the target scale used for standardization, relative to |mean|.
    scale_floor: float = 0.5
    # Known input-location covariance handed to the GP (expected-kernel correction).
    gp_input_noise: np.ndarray | None = None
    regions: tuple = (8, 8)
    confidence: float = 0.8
    # "midrange": tau = min + f * (max - min) of the posterior mean;
    # "max_fraction": tau = f * max.
    tau_rule: str = "midrange"
    tau_fraction: float = 0.5
    lse_level_fraction: float = 0.6
    lse_beta: float = 9.0
    prior_field: np.ndarray | None = None
    decay_halflife: float = 10.0
    obstacles: tuple = ()
    footprint: RobotFootprint = field(default_factory=RobotFootprint)
    budget: int = 30
    measurement_stride: int = 4
    n_primitives: int = 6
    primitive_duration: float | None = None
    v_bounds: tuple = (0.0, 0.1)
    w_bounds: tuple = (-math.pi, math.pi)
    dt: float | None = None
    cem: cem.CemConfig = field(default_factory=cem.CemConfig)

    def __post_init__(self):
        if self.acquisition_kind not in KINDS:
            raise ValueError(f"acquisition_kind must be one of {KINDS}, got {self.acquisition_kind!r}")
        if self.tau_rule not in ("midrange", "max_fraction"):
            raise ValueError(f"tau_rule must be 'midrange' or 'max_fraction', got {self.tau_rule!r}")
        if self.budget < 0:
            raise ValueError("budget must be non-negative")
        if self.measurement_stride < 1:
            raise ValueError("measurement_stride must be at least 1")
        if self.prior_field is not None:
            prior = np.asarray(self.prior_field, dtype=float).reshape(self.grid.shape)
            object.__setattr__(self, "prior_field", acq.normalize(prior))

    @property
    def tau(self):
        """Primitive duration; by default a full trajectory spans 15% of the domain diagonal."""
        if self.primitive_duration is not None:
            return self.primitive_duration
        diag = math.hypot(self.grid.width, self.grid.height)
        return 0.15 * diag / (self.n_primitives * self.v_bounds[1])

    @property
    def step(self):
        return self.tau / 20 if self.dt is None else self.dt

    def region_grid(self, tumor_threshold=None):
        nrx, nry = self.regions
        return RegionGrid.uniform(self.grid.bounds, nrx, nry, tumor_threshold, self.confidence)


@dataclass
class SearchState:
    gp: GpModel
    rng: np.random.Generator
    pose: Pose | None = None
    lse_state: acq.LseState | None = None
    points: list = field(default_factory=list)
    values: list = field(default_factory=list)
    cycle: int = 0
    last_z: np.ndarray | None = None
    events: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=lambda: {
        "constraint_violations": 0,
        "cycle_best_costs": [],
        "tau_halvings": 0,
    })

    @property
    def n_measurements(self):
        return len(self.values)


def init_state(config: SearchConfig, rng, pose: Pose | None = None) -> SearchState:
    state = SearchState(gp=_fit(config, [], []), rng=np.random.default_rng(rng), pose=pose)
    if config.acquisition_kind == "LSE":
        state.lse_state = acq.LseState(beta=config.lse_beta).initialize(config.grid)
    return state


def _fit(config: SearchConfig, points, values):
    noise = config.gp_input_noise if len(values) else None
    return fit(config.kernel, np.reshape(points, (-1, 2)), values, input_noise=noise,
               standardize=True, scale_floor=config.scale_floor)


def agent_threshold(config: SearchConfig, mean):
    hi = float(np.max(mean))
    if config.tau_rule == "max_fraction":
        return config.tau_fraction * hi
    lo = float(np.min(mean))
    return lo + config.tau_fraction * (hi - lo)


def agent_regions(config: SearchConfig, gp: GpModel) -> RegionGrid:
    """The agent's RegionGrid with its threshold tied to the current estimate's range."""
    return config.region_grid(agent_threshold(config, gp.predict(config.grid.centers).mean))


def acquisition_field(state: SearchState, config: SearchConfig):
    """Normalized acquisition of the configured kind on the grid.

    Updates the LSE confidence region as a side effect.
    """
    kind = config.acquisition_kind
    grid = config.grid
    if kind == "UNC":
        return acq.normalize(acq.unc_field(state.gp, grid))
    if kind == "EI":
        incumbent = max(state.values) if state.values else 0.0
        return acq.normalize(acq.ei_field(state.gp, grid, incumbent))
    if kind == "LSE":
        mean = state.gp.predict(grid.centers).mean
        state.lse_state.level = config.lse_level_fraction * float(mean.max())
        return acq.normalize(acq.lse_update_and_field(state.gp, state.lse_state, grid), shift=True)
    regions = agent_regions(config, state.gp)
    return acq.normalize(acq.aas_field(state.gp, regions, grid), shift=True)


def decay(t, halflife):
    return 2.0 ** (-t / halflife)


def total_acquisition(field_values, config: SearchConfig, t):
    """Blend the acquisition with the decaying prior and renormalize to max 1."""
    if config.prior_field is None:
        return np.asarray(field_values, dtype=float)
    return acq.normalize(field_values + decay(t, config.decay_halflife) * config.prior_field)


def _path_integral(positions, field_values, grid: DomainGrid):
    """Arc-length-weighted trapezoid integral of the field along (B, T, 2) positions."""
    vals = grid.interpolate(field_values, positions)
    ds = np.linalg.norm(np.diff(positions, axis=-2), axis=-1)
    return np.sum(0.5 * (vals[..., 1:] + vals[..., :-1]) * ds, axis=-1)


def trajectory_costs(Z, q0: Pose, field_values, config: SearchConfig, tau=None):
    """Vectorized cost over a batch of parameter vectors (B, 2m)."""
    tau = config.tau if tau is None else tau
    dt = min(config.step, tau)
    poses, _ = rollout_batch(q0.as_array(), Z, tau, dt)
    pos = poses[..., :2]
    cost = -_path_integral(pos, field_values, config.grid)
    ok = clearance(pos, config.obstacles, config.footprint, config.grid.bounds).min(axis=-1) >= 0
    return np.where(ok, cost, np.inf)


def trajectory_cost(params: PrimitiveParams, q0: Pose, field_values, config: SearchConfig) -> float:
    """Negative integral of the field along the rolled-out path; ``+inf`` if it collides."""
    return float(trajectory_costs(params.vector[None], q0, field_values, config, params.tau)[0])


def select_probe(field_values):
    """Linear index of the maximum; ties go to the lowest index."""
    return int(np.argmax(np.asarray(field_values).ravel()))


def _record(state, points, values):
    state.points.extend(map(tuple, np.asarray(points, dtype=float)))
    state.values.extend(float(v) for v in values)


def discrete_step(state: SearchState, config: SearchConfig, measure, scorer=None) -> SearchState:
    """Probe once at the acquisition argmax (uniformly random cell on the first probe).

    ``measure`` maps an (n, 2) array of commanded points to ``(reported, values)``.
    ``scorer``, if given, maps the refitted GP to extra fields for the event record.
    """
    grid = config.grid
    if not state.values:
        idx = int(state.rng.integers(grid.size))
    else:
        xi = total_acquisition(acquisition_field(state, config), config, state.n_measurements)
        idx = select_probe(xi)
    x = grid.centers[idx][None, :]
    reported, values = measure(x)
    _record(state, reported, values)
    state.gp = _fit(config, state.points, state.values)
    state.cycle += 1
    event = {"step": state.cycle, "cell": idx, "x": float(x[0, 0]), "y": float(x[0, 1]),
             "value": float(values[0])}
    if scorer is not None:
        event.update(scorer(state.gp))
    state.events.append(event)
    return state


def _random_feasible(state, config, tau, tries=100):
    m = config.n_primitives
    lo = lower_bounds(m, config.v_bounds, config.w_bounds)
    hi = upper_bounds(m, config.v_bounds, config.w_bounds)
    Z = state.rng.uniform(lo, hi, size=(tries, 2 * m))
    field0 = np.zeros(config.grid.shape)
    ok = np.isfinite(trajectory_costs(Z, state.pose, field0, config, tau))
    if ok.any():
        return Z[int(np.argmax(ok))]
    # standing still is feasible whenever the current pose is
    return np.column_stack([np.zeros(m), np.zeros(m)]).ravel()


def plan(state: SearchState, config: SearchConfig, field_values, tau):
    """Run CE over primitive parameters from the current pose.

    The initial mixture pairs the warm start (the previous cycle's best
    parameters, or the box centre) with a slow component at the minimum
    speed. After clipping, the slow component puts real mass on turning in
    place, which is often the only feasible move when a cycle ended at the
    domain edge facing outward.
    """
    m = config.n_primitives
    lo = lower_bounds(m, config.v_bounds, config.w_bounds)
    hi = upper_bounds(m, config.v_bounds, config.w_bounds)
    warm = 0.5 * (lo + hi) if state.last_z is None else state.last_z
    slow = np.tile([config.v_bounds[0], 0.5 * sum(config.w_bounds)], m)
    cov = np.diag(((hi - lo) / 2) ** 2)
    gmm0 = cem.GmmParams(np.vstack([warm, slow]), np.stack([cov, cov]), np.array([0.5, 0.5]))
    cfg = replace(config.cem, seed=int(state.rng.integers(2**63)))
    return cem.optimize(
        lambda Z: trajectory_costs(Z, state.pose, field_values, config, tau),
        gmm0,
        cfg,
        project=lambda Z: clamp_vectors(Z, m, config.v_bounds, config.w_bounds),
        vectorized=True,
        K=config.cem.n_components,
    )


def continuous_step(state: SearchState, config: SearchConfig, measure, scorer=None) -> SearchState:
    """Execute one trajectory cycle.

    The first cycle runs a random feasible trajectory; later cycles run the
    CE-optimized one. Measurements are taken at every ``measurement_stride``-th
    rollout sample, ``floor(samples / stride)`` per cycle.
    """
    if state.pose is None:
        raise ValueError("continuous search needs a start pose")
    tau = config.tau
    trace = []
    if state.cycle == 0:
        z = _random_feasible(state, config, tau)
        best_cost = float("nan")
    else:
        xi = total_acquisition(acquisition_field(state, config), config, state.n_measurements)
        try:
            res = plan(state, config, xi, tau)
        except cem.AllInfeasibleError:
            tau = tau / 2
            state.diagnostics["tau_halvings"] += 1
            res = plan(state, config, xi, tau)
        z, best_cost, trace = res.best, res.best_cost, res.trace
        state.last_z = z.copy()

    params = PrimitiveParams.from_vector(z, tau, config.v_bounds, config.w_bounds)
    path = rollout(state.pose, params, min(config.step, tau))
    clear = prox_constraint(path, config.obstacles, config.footprint, config.grid.bounds)
    if clear < 0:
        state.diagnostics["constraint_violations"] += 1
        raise InfeasiblePathError(f"executed path has clearance {clear:.3g} < 0")

    stride = config.measurement_stride
    x = path.positions[stride - 1::stride]
    reported, values = measure(x)
    _record(state, reported, values)
    state.gp = _fit(config, state.points, state.values)
    state.pose = path.end
    state.cycle += 1
    state.diagnostics["cycle_best_costs"].append(best_cost)
    event = {"cycle": state.cycle, "path": path, "params": z, "best_cost": best_cost,
             "ce_trace": trace, "measured": x, "values": np.asarray(values, dtype=float),
             "clearance": clear}
    if scorer is not None:
        event.update(scorer(state.gp))
    state.events.append(event)
    return state
