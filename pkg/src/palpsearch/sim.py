"""Synthetic phantoms, virtual palpation and recall scoring.

Ground-truth stiffness maps are a flat baseline plus isotropic Gaussian
inclusions. A virtual probe indents the surface at a noisy contact point,
reads noisy forces over a displacement sweep and reports the least-squares
slope as the stiffness.
"""
from __future__ import annotations

import csv
import io
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import acquisition as acq
from .grids import DomainGrid, RegionGrid
from .search import (
    RobotFootprint,
    SearchConfig,
    clearance,
    continuous_step,
    discrete_step,
    init_state,
    agent_regions,
)
from .trajectory import Pose

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class StiffnessField:
    values: np.ndarray  # (ny, nx), non-negative
    grid: DomainGrid
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(f"field shape {v.shape} does not match grid {self.grid.shape}")
        if np.any(v < 0) or not np.all(np.isfinite(v)):
            raise ValueError("stiffness values must be finite and non-negative")
        object.__setattr__(self, "values", v)

    def value_at(self, points):
        return self.grid.interpolate(self.values, points)

    @property
    def max(self):
        return float(self.values.max())


def write_field_csv(values, grid: DomainGrid, fh):
    """Two header lines (``nx,ny`` and ``xmin,xmax,ymin,ymax``), then ny rows from ymin."""
    w = csv.writer(fh, lineterminator="\n")
    w.writerow([grid.nx, grid.ny])
    w.writerow([repr(b) for b in grid.bounds])
    for row in np.asarray(values, dtype=float).reshape(grid.shape):
        w.writerow([repr(float(v)) for v in row])


def read_field_csv(fh):
    """Parse the stiffness-map CSV format; returns ``(values, grid)``."""
    rows = [r for r in csv.reader(fh) if r]
    if len(rows) < 2:
        raise ValueError("field CSV needs two header lines")
    nx, ny = (int(v) for v in rows[0])
    bounds = tuple(float(v) for v in rows[1])
    if len(bounds) != 4:
        raise ValueError("second header line must be xmin,xmax,ymin,ymax")
    body = rows[2:]
    if len(body) != ny or any(len(r) != nx for r in body):
        raise ValueError(f"expected {ny} rows of {nx} values")
    grid = DomainGrid(bounds, nx, ny)
    return np.array([[float(v) for v in r] for r in body]), grid


def save_field(field_: StiffnessField, path):
    with open(path, "w", newline="") as fh:
        write_field_csv(field_.values, field_.grid, fh)


def load_field(path) -> StiffnessField:
    with open(path, newline="") as fh:
        values, grid = read_field_csv(fh)
    return StiffnessField(values, grid, {"source": str(path)})


def field_to_csv_text(values, grid):
    buf = io.StringIO()
    write_field_csv(values, grid, buf)
    return buf.getvalue()


def generate_phantom(seed, grid: DomainGrid, n_inclusions=2, amplitude_range=(3.0, 6.0),
                     width_range=(0.05, 0.12), baseline=1.0) -> StiffnessField:
    """Random baseline-plus-bumps stiffness map.

    Centres are uniform over the inner 80% of the domain. Amplitudes are
    multiples of ``baseline``; widths are fractions of the domain width.
    """
    if n_inclusions < 0:
        raise ValueError("n_inclusions must be non-negative")
    rng = np.random.default_rng(seed)
    xmin, xmax, ymin, ymax = grid.bounds
    W, H = grid.width, grid.height
    bumps = []
    for _ in range(n_inclusions):
        cx = rng.uniform(xmin + 0.1 * W, xmax - 0.1 * W)
        cy = rng.uniform(ymin + 0.1 * H, ymax - 0.1 * H)
        amp = baseline * rng.uniform(*amplitude_range)
        width = W * rng.uniform(*width_range)
        bumps.append((cx, cy, amp, width))
    return phantom_from_bumps(grid, bumps, baseline, {"seed": seed})


def phantom_from_bumps(grid: DomainGrid, bumps, baseline=1.0, provenance=None) -> StiffnessField:
    """Field from explicit ``(cx, cy, amplitude, width)`` inclusions."""
    c = grid.centers
    v = np.full(len(c), float(baseline))
    for cx, cy, amp, width in bumps:
        v += amp * np.exp(-((c[:, 0] - cx) ** 2 + (c[:, 1] - cy) ** 2) / (2 * width**2))
    prov = {"baseline": baseline, "bumps": [list(map(float, b)) for b in bumps]}
    prov.update(provenance or {})
    return StiffnessField(v.reshape(grid.shape), grid, prov)


@dataclass(frozen=True)
class ProbeModel:
    position_noise: np.ndarray = field(default_factory=lambda: np.zeros((2, 2)))
    force_noise_sd: float = 0.05
    displacement_steps: int = 5
    max_indent: float = 1.0

    def __post_init__(self):
        if self.displacement_steps < 2:
            raise ValueError("displacement_steps must be at least 2")
        if not self.max_indent > 0:
            raise ValueError("max_indent must be positive")
        if self.force_noise_sd < 0:
            raise ValueError("force_noise_sd must be non-negative")
        object.__setattr__(self, "position_noise", np.asarray(self.position_noise, dtype=float).reshape(2, 2))

    @property
    def displacements(self):
        return np.linspace(0.0, self.max_indent, self.displacement_steps)


def estimate_stiffness(displacements, forces) -> float:
    """Least-squares slope of force against displacement, with intercept."""
    d = np.asarray(displacements, dtype=float)
    f = np.asarray(forces, dtype=float)
    dc = d - d.mean()
    sxx = dc @ dc
    if sxx == 0:
        raise ValueError("displacements are all identical; slope is undefined")
    return float(dc @ (f - f.mean()) / sxx)


def probe(field_: StiffnessField, x, model: ProbeModel, rng):
    """Palpate near ``x``; returns ``(x, stiffness estimate)``.

    The true contact point is ``x`` plus Gaussian position noise (clamped to
    the domain) but the commanded ``x`` is what gets reported.
    """
    x = np.asarray(x, dtype=float)
    contact = x
    if np.any(model.position_noise):
        contact = field_.grid.clip(rng.multivariate_normal(x, model.position_noise))
    k_true = float(field_.value_at(contact))
    d = model.displacements
    f = k_true * d
    if model.force_noise_sd > 0:
        f = f + rng.normal(0.0, model.force_noise_sd, size=len(d))
    return x, estimate_stiffness(d, f)


def make_measure(field_: StiffnessField, model: ProbeModel, rng):
    """Batch probe callable in the form the search loops expect."""
    def measure(points):
        points = np.atleast_2d(points)
        values = [probe(field_, p, model, rng)[1] for p in points]
        return points, np.array(values)
    return measure


def truth_labels(field_: StiffnessField, regions: RegionGrid, tau_truth: float):
    """Regions whose average ground-truth stiffness exceeds ``tau_truth``."""
    W = regions.weights(field_.grid)
    return W @ field_.values.ravel() > tau_truth


@dataclass(frozen=True)
class RecallEntry:
    recall: float
    tp: int
    fn: int


def score_recall(labels, truth) -> RecallEntry:
    labels = np.asarray(labels, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if labels.shape != truth.shape:
        raise ValueError("label sets come from different region grids")
    tp = int(np.sum(labels & truth))
    fn = int(np.sum(~labels & truth))
    return RecallEntry(tp / (tp + fn) if tp + fn else 1.0, tp, fn)


@dataclass
class RecallReport:
    recall: list
    tp: list
    fn: list
    seed: int

    def append(self, e: RecallEntry):
        self.recall.append(e.recall)
        self.tp.append(e.tp)
        self.fn.append(e.fn)


@dataclass(frozen=True)
class SimConfig:
    """Everything besides the search itself needed to replay a simulated run."""

    search: SearchConfig = field(default_factory=SearchConfig)
    probe: ProbeModel = field(default_factory=ProbeModel)
    n_inclusions: int = 2
    amplitude_range: tuple = (3.0, 6.0)
    width_range: tuple = (0.05, 0.12)
    baseline: float = 1.0
    truth_fraction: float = 0.5
    mode: str = "discrete"

    def __post_init__(self):
        if self.mode not in ("discrete", "continuous"):
            raise ValueError(f"mode must be 'discrete' or 'continuous', got {self.mode!r}")


@dataclass
class RunResult:
    seed: int
    phantom: StiffnessField
    state: object
    recall: RecallReport
    measurements: list  # cumulative measurement count after each step
    truth: np.ndarray

    def estimated_field(self):
        grid = self.phantom.grid
        return self.state.gp.predict(grid.centers).mean.reshape(grid.shape)

    def rmse(self):
        return float(np.sqrt(np.mean((self.estimated_field() - self.phantom.values) ** 2)))


def _streams(seed):
    phantom_ss, agent_ss, probe_ss = np.random.SeedSequence(seed).spawn(3)
    return phantom_ss, agent_ss, probe_ss


def phantom_for(cfg: SimConfig, seed) -> StiffnessField:
    return generate_phantom(_streams(seed)[0], cfg.search.grid, cfg.n_inclusions,
                            cfg.amplitude_range, cfg.width_range, cfg.baseline)


def random_start(grid: DomainGrid, rng, margin=0.1, obstacles=(), footprint=None, tries=1000):
    """Uniform pose in the inner part of the domain, clear of every obstacle."""
    xmin, xmax, ymin, ymax = grid.bounds
    footprint = footprint or RobotFootprint()
    for _ in range(tries):
        x = rng.uniform(xmin + margin * grid.width, xmax - margin * grid.width)
        y = rng.uniform(ymin + margin * grid.height, ymax - margin * grid.height)
        theta = rng.uniform(-math.pi, math.pi)
        if clearance(np.array([x, y]), obstacles, footprint) > 0:
            return Pose(float(x), float(y), float(theta))
    raise RuntimeError(f"no obstacle-free start pose found in {tries} draws")


def simulate(cfg: SimConfig, seed: int, phantom: StiffnessField | None = None) -> RunResult:
    """One full discrete or continuous run with recall scored after every step.

    Three RNG streams derive from ``seed``: the phantom, the agent (start
    location, random first move, CE seeds) and the probe noise, so runs with
    different acquisition kinds share phantom and start.
    """
    phantom_ss, agent_ss, probe_ss = _streams(seed)
    if phantom is None:
        phantom = generate_phantom(phantom_ss, cfg.search.grid, cfg.n_inclusions,
                                   cfg.amplitude_range, cfg.width_range, cfg.baseline)
    sc = cfg.search
    agent_rng = np.random.default_rng(agent_ss)
    start = None
    if cfg.mode == "continuous":
        start = random_start(sc.grid, agent_rng, obstacles=sc.obstacles, footprint=sc.footprint)
    state = init_state(sc, agent_rng, start)
    truth = truth_labels(phantom, sc.region_grid(), cfg.truth_fraction * phantom.max)
    measure = make_measure(phantom, cfg.probe, np.random.default_rng(probe_ss))
    report = RecallReport([], [], [], seed)

    def scorer(gp):
        labels = acq.classify_regions(gp, agent_regions(sc, gp), sc.grid)
        e = score_recall(labels, truth)
        report.append(e)
        return {"recall": e.recall, "tp": e.tp, "fn": e.fn}

    step = discrete_step if cfg.mode == "discrete" else continuous_step
    counts = []
    for _ in range(sc.budget):
        step(state, sc, measure, scorer)
        counts.append(state.n_measurements)
    return RunResult(seed, phantom, state, report, counts, truth)


@dataclass
class BatchReport:
    steps: dict  # kind -> measurement counts per step
    mean: dict  # kind -> per-step mean recall
    sd: dict
    n_effective: dict
    failures: dict  # kind -> list of (seed, message)
    final: dict = field(default_factory=dict)  # kind -> per-run final recall
    runs: dict = field(default_factory=dict)  # kind -> list of (seed, per-step recall)


def _run_one(args):
    cfg, kind, seed, fixed_seed = args
    cfg = replace(cfg, search=replace(cfg.search, acquisition_kind=kind))
    phantom = phantom_for(cfg, fixed_seed) if fixed_seed is not None else None
    try:
        res = simulate(cfg, seed, phantom)
    except Exception as exc:  # recorded per run, never aborts the batch
        log.warning("run %s/%d failed: %s", kind, seed, exc)
        return kind, seed, None, None, f"{type(exc).__name__}: {exc}"
    return kind, seed, res.recall.recall, res.measurements, None


def run_batch(cfg: SimConfig, n_runs: int, seed0: int, kinds=("AAS", "LSE", "UNC", "EI"),
              fixed_phantom=False, n_jobs=1) -> BatchReport:
    """Repeat simulated runs for seeds ``seed0 .. seed0 + n_runs - 1`` per acquisition kind.

    With ``fixed_phantom`` every run shares the phantom of ``seed0`` and only
    the start differs. Failed runs are excluded from the curves and listed in
    ``failures``.
    """
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    fixed = seed0 if fixed_phantom else None
    jobs = [(cfg, kind, seed0 + i, fixed) for kind in kinds for i in range(n_runs)]
    if n_jobs == 1:
        results = [_run_one(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as ex:
            results = list(ex.map(_run_one, jobs))

    report = BatchReport({}, {}, {}, {}, {k: [] for k in kinds}, {})
    for kind in kinds:
        curves, steps = [], None
        for k, seed, rec, counts, err in results:
            if k != kind:
                continue
            if err is not None:
                report.failures[kind].append((seed, err))
                continue
            curves.append(rec)
            report.runs.setdefault(kind, []).append((seed, list(rec)))
            steps = counts if steps is None else steps
        report.n_effective[kind] = len(curves)
        report.runs.setdefault(kind, [])
        if curves:
            arr = np.array(curves, dtype=float)
            report.mean[kind] = arr.mean(axis=0)
            report.sd[kind] = arr.std(axis=0)
            report.steps[kind] = list(steps)
            report.final[kind] = arr[:, -1]
        else:
            report.mean[kind] = report.sd[kind] = np.zeros(0)
            report.steps[kind] = []
            report.final[kind] = np.zeros(0)
    return report
