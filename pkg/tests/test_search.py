import math

import numpy as np
import pytest
import shapely
from scipy.integrate import trapezoid
from hypothesis import given, settings
from hypothesis import strategies as st

from palpsearch.cem import CemConfig
from palpsearch.grids import DomainGrid
from palpsearch.search import (
    Disc,
    InfeasiblePathError,
    Polygon,
    RobotFootprint,
    SearchConfig,
    acquisition_field,
    clearance,
    continuous_step,
    decay,
    discrete_step,
    init_state,
    plan,
    prox_constraint,
    select_probe,
    total_acquisition,
    trajectory_cost,
    trajectory_costs,
)
from palpsearch.trajectory import Path, Pose, PrimitiveParams, rollout

GRID = DomainGrid((0, 1, 0, 1), 20, 20)


def bump(grid, cx, cy, width):
    c = grid.centers
    return np.exp(-((c[:, 0] - cx) ** 2 + (c[:, 1] - cy) ** 2) / (2 * width**2)).reshape(grid.shape)


def straight_path(p0, p1, n=50):
    t = np.linspace(0, 1, n)[:, None]
    pts = (1 - t) * np.asarray(p0) + t * np.asarray(p1)
    poses = np.column_stack([pts, np.zeros(n)])
    return Path(poses, t.ravel())


def field_measure(f):
    def measure(points):
        points = np.atleast_2d(points)
        return points, np.array([f(p) for p in points])
    return measure


# total acquisition --------------------------------------------------------

def test_total_acquisition_examples():
    xi = np.random.default_rng(0).uniform(0, 1, GRID.shape)
    xi /= xi.max()
    np.testing.assert_array_equal(total_acquisition(xi, SearchConfig(grid=GRID), 3.0), xi)
    cfg = SearchConfig(grid=GRID, prior_field=xi, decay_halflife=5.0)
    np.testing.assert_allclose(total_acquisition(xi, cfg, 0.0), xi)
    late = total_acquisition(xi, cfg, 50.0)
    assert np.abs(late - xi).max() < 1e-3
    assert late.max() == pytest.approx(1.0)


def test_decay():
    assert decay(0, 7.0) == 1.0
    ts = np.linspace(0, 100, 50)
    assert np.all(np.diff(decay(ts, 7.0)) < 0)


def test_prior_field_normalized_on_config():
    cfg = SearchConfig(grid=GRID, prior_field=3.0 * np.ones(GRID.shape))
    assert cfg.prior_field.max() == 1.0


# prox constraint -----------------------------------------------------------

def test_prox_no_obstacles_is_unbounded():
    path = straight_path((0.1, 0.1), (0.9, 0.9))
    assert prox_constraint(path, (), RobotFootprint(0.0), GRID.bounds) == math.inf


def test_prox_disc_geometry():
    path = straight_path((0.0, 0.0), (0.0, 0.0), n=2)
    d = Disc((1.0, 0.0), 0.5)
    assert prox_constraint(path, [d], RobotFootprint(0.2)) == pytest.approx(0.3)


def test_prox_domain_exit_is_negative():
    path = straight_path((0.5, 0.5), (1.2, 0.5))
    assert prox_constraint(path, (), RobotFootprint(0.0), GRID.bounds) == pytest.approx(-0.2)


def test_prox_polygon_crossing_matches_shapely_oracle():
    verts = ((0.4, 0.2), (0.7, 0.35), (0.6, 0.8), (0.35, 0.6))
    poly = Polygon(verts)
    r = 0.03
    path = straight_path((0.1, 0.5), (0.9, 0.45), n=200)
    val = prox_constraint(path, [poly], RobotFootprint(r))
    # dense resampling (10x) with shapely distances
    dense = straight_path((0.1, 0.5), (0.9, 0.45), n=2000).positions
    sp = shapely.Polygon(verts)
    ring = sp.exterior
    depth = [(-ring.distance(shapely.Point(p)) if sp.contains(shapely.Point(p)) else ring.distance(shapely.Point(p)))
             for p in dense]
    oracle = min(depth) - r
    assert val < 0
    assert val == pytest.approx(oracle, abs=1e-3)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_polygon_signed_distance_matches_shapely(seed):
    rng = np.random.default_rng(seed)
    # random star-shaped polygon
    ang = np.sort(rng.uniform(0, 2 * np.pi, 6))
    rad = rng.uniform(0.1, 0.3, 6)
    verts = tuple(zip(0.5 + rad * np.cos(ang), 0.5 + rad * np.sin(ang)))
    sp = shapely.Polygon(verts)
    if not sp.is_valid or sp.area < 1e-4:
        return
    pts = rng.uniform(0, 1, (40, 2))
    got = Polygon(verts).signed_distance(pts)
    ring = sp.exterior
    want = [(-1 if sp.contains(shapely.Point(p)) else 1) * ring.distance(shapely.Point(p)) for p in pts]
    np.testing.assert_allclose(got, want, atol=1e-12)


def test_obstacle_validation():
    with pytest.raises(ValueError):
        Disc((0, 0), 0.0)
    with pytest.raises(ValueError):
        Polygon(((0, 0), (1, 1), (2, 2)))
    with pytest.raises(ValueError):
        RobotFootprint(-0.1)


# trajectory cost ----------------------------------------------------------

def test_constant_field_cost_is_length():
    cfg = SearchConfig(grid=GRID, n_primitives=2, v_bounds=(0, 0.2))
    p = PrimitiveParams(np.array([[0.2, 0.0], [0.2, 0.5]]), 1.0, (0, 0.2), (-1, 1))
    cost = trajectory_cost(p, Pose(0.3, 0.3, 0.2), 0.7 * np.ones(GRID.shape), cfg)
    assert cost == pytest.approx(-0.7 * 0.4, abs=1e-3)


def test_cost_infinite_through_obstacle():
    cfg = SearchConfig(grid=GRID, obstacles=(Disc((0.5, 0.3), 0.05),))
    p = PrimitiveParams(np.array([[0.4, 0.0]]), 1.0, (0, 1), (-1, 1))
    assert trajectory_cost(p, Pose(0.2, 0.3, 0.0), np.ones(GRID.shape), cfg) == math.inf


def test_centered_path_through_bump_costs_less():
    field = bump(GRID, 0.5, 0.5, 0.08)
    cfg = SearchConfig(grid=GRID)
    p = PrimitiveParams(np.array([[0.6, 0.0]]), 1.0, (0, 1), (-1, 1))
    centered = trajectory_cost(p, Pose(0.2, 0.5, 0.0), field, cfg)
    offset = trajectory_cost(p, Pose(0.2, 0.65, 0.0), field, cfg)
    # quadrature of the analytic bump along each line, far finer than the grid
    def line_integral(y0):
        x = np.linspace(0.2, 0.8, 6001)
        return -trapezoid(np.exp(-((x - 0.5) ** 2 + (y0 - 0.5) ** 2) / (2 * 0.08**2)), x)
    assert centered < offset
    assert line_integral(0.5) < line_integral(0.65)
    assert centered == pytest.approx(line_integral(0.5), rel=0.05)
    assert offset == pytest.approx(line_integral(0.65), abs=0.01)


def test_vectorized_costs_match_single():
    rng = np.random.default_rng(0)
    cfg = SearchConfig(grid=GRID, n_primitives=3, obstacles=(Disc((0.5, 0.5), 0.1),))
    field = rng.uniform(0, 1, GRID.shape)
    Z = np.column_stack([rng.uniform(0, 0.1, (30, 3)), rng.uniform(-3, 3, (30, 3))])[:, [0, 3, 1, 4, 2, 5]]
    q0 = Pose(0.3, 0.3, 0.5)
    many = trajectory_costs(Z, q0, field, cfg)
    for z, c in zip(Z, many):
        p = PrimitiveParams.from_vector(z, cfg.tau, cfg.v_bounds, cfg.w_bounds)
        assert trajectory_cost(p, q0, field, cfg) == c


# discrete loop ------------------------------------------------------------

def test_tie_break_lowest_index():
    assert select_probe(np.ones((4, 4))) == 0
    f = np.zeros((3, 3))
    f[1, 2] = f[2, 0] = 1
    assert select_probe(f) == 5


def test_unc_never_reprobes_noiseless_point():
    from palpsearch.gp import Kernel
    grid = DomainGrid((0, 1, 0, 1), 6, 6)
    cfg = SearchConfig(acquisition_kind="UNC", grid=grid, kernel=Kernel(0.2, 1.0, 0.0), budget=10)
    state = init_state(cfg, 0)
    meas = field_measure(lambda p: 1.0 + p[0])
    for _ in range(10):
        discrete_step(state, cfg, meas)
    cells = [e["cell"] for e in state.events]
    assert len(set(cells)) == len(cells)


def test_discrete_loop_bookkeeping():
    cfg = SearchConfig(acquisition_kind="AAS", grid=GRID, budget=6)
    state = init_state(cfg, 1)
    meas = field_measure(lambda p: 1.0 + 4.0 * math.exp(-((p[0] - 0.6) ** 2 + (p[1] - 0.4) ** 2) / 0.01))
    for i in range(6):
        discrete_step(state, cfg, meas, scorer=lambda gp: {"n": gp.n})
        assert state.gp.n == state.n_measurements == i + 1
        assert state.events[-1]["n"] == i + 1
    assert [e["step"] for e in state.events] == list(range(1, 7))


@pytest.mark.parametrize("kind", ["AAS", "LSE", "UNC", "EI"])
def test_acquisition_fields_normalized(kind):
    cfg = SearchConfig(acquisition_kind=kind, grid=GRID)
    state = init_state(cfg, 3)
    meas = field_measure(lambda p: 1.0 + p[0] * p[1])
    for _ in range(4):
        discrete_step(state, cfg, meas)
    xi = acquisition_field(state, cfg)
    assert xi.shape == GRID.shape
    assert xi.min() >= 0
    assert xi.max() == pytest.approx(1.0) or not xi.any()


# continuous loop ----------------------------------------------------------

def small_cfg(**kw):
    base = dict(grid=GRID, budget=3, n_primitives=3, cem=CemConfig(n_samples=60, elite_frac=0.1, max_iters=10))
    base.update(kw)
    return SearchConfig(**base)


def test_continuous_plumbing_constant_field():
    cfg = small_cfg(acquisition_kind="UNC", measurement_stride=4)
    state = init_state(cfg, 0, Pose(0.5, 0.5, 0.0))
    meas = field_measure(lambda p: 2.0)
    prev_end = state.pose
    for _ in range(3):
        continuous_step(state, cfg, meas)
        ev = state.events[-1]
        samples = len(ev["path"])
        assert len(ev["measured"]) == samples // cfg.measurement_stride
        assert ev["clearance"] >= 0
        assert Pose.from_array(ev["path"].poses[0]).same_as(prev_end, tol=0)
        prev_end = state.pose
    assert state.gp.n == state.n_measurements == sum(len(e["measured"]) for e in state.events)


def test_continuous_obstacle_detour():
    # the only acquisition bump sits behind a disc
    obstacle = Disc((0.5, 0.5), 0.08)
    cfg = small_cfg(obstacles=(obstacle,), v_bounds=(0, 0.2), n_primitives=4, primitive_duration=0.6,
                    cem=CemConfig(n_samples=200, elite_frac=0.1, max_iters=20, seed=3))
    field = bump(GRID, 0.7, 0.5, 0.06)
    state = init_state(cfg, 5, Pose(0.3, 0.5, 0.0))
    res = plan(state, cfg, field, cfg.tau)
    p = PrimitiveParams.from_vector(res.best, cfg.tau, cfg.v_bounds, cfg.w_bounds)
    path = rollout(state.pose, p, cfg.step)
    assert prox_constraint(path, cfg.obstacles, cfg.footprint, GRID.bounds) >= 0
    first_iter_mean_cost = trajectory_costs(
        np.tile([0.1, 0.0], 4)[None], state.pose, field, cfg)[0]
    assert math.isinf(first_iter_mean_cost)  # straight at the bump goes through the disc
    assert res.best_cost < 0
    assert res.trace[-1]["best_cost"] <= res.trace[0]["best_cost"]


def test_continuous_requires_pose():
    cfg = small_cfg()
    with pytest.raises(ValueError):
        continuous_step(init_state(cfg, 0), cfg, field_measure(lambda p: 1.0))


def test_start_inside_obstacle_raises():
    cfg = small_cfg(obstacles=(Disc((0.5, 0.5), 0.2),))
    state = init_state(cfg, 0, Pose(0.5, 0.5, 0.0))
    with pytest.raises(InfeasiblePathError):
        continuous_step(state, cfg, field_measure(lambda p: 1.0))


def test_clearance_broadcasts():
    pts = np.random.default_rng(0).uniform(0, 1, (3, 5, 2))
    c = clearance(pts, [Disc((0.5, 0.5), 0.1)], RobotFootprint(0.01), GRID.bounds)
    assert c.shape == (3, 5)
