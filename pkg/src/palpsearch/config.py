"""Flat ``key = value`` run configuration with dotted section keys.

Every key is optional; unset keys take the defaults below. The resolved
mapping (all keys present) is what run manifests record, and it is enough to
replay a run exactly.

Example::

    # comment
    search.acquisition_kind = aas
    search.obstacles = disc(0.5, 0.5, 0.1); poly(0.1,0.1, 0.3,0.1, 0.3,0.2)
    gp.lengthscale = 0.08
"""
from __future__ import annotations

import math
import os
import re

import numpy as np

from .cem import CemConfig
from .gp import Kernel
from .grids import DomainGrid
from .search import KINDS, Disc, Polygon, RobotFootprint, SearchConfig
from .sim import ProbeModel, SimConfig, load_field


class ConfigError(ValueError):
    """A config key is unknown or its value is malformed."""

    def __init__(self, key, message):
        super().__init__(f"config key {key!r}: {message}")
        self.key = key


AUTO = "auto"

# key -> (parser name, default)
SCHEMA = {
    "seed": ("int", 0),
    "grid.nx": ("int", 32),
    "grid.ny": ("int", 32),
    "grid.xmin": ("float", 0.0),
    "grid.xmax": ("float", 1.0),
    "grid.ymin": ("float", 0.0),
    "grid.ymax": ("float", 1.0),
    "gp.lengthscale": ("float_auto", AUTO),  # auto: 0.1 x domain width
    "gp.signal_variance": ("float", 1.0),
    "gp.noise_variance": ("float", 0.01),
    "gp.scale_floor": ("float", 0.5),
    "gp.use_input_noise": ("bool", True),
    "acq.regions_x": ("int", 8),
    "acq.regions_y": ("int", 8),
    "acq.confidence": ("float", 0.8),
    "acq.tau_rule": ("choice:midrange,max_fraction", "midrange"),
    "acq.tau_fraction": ("float", 0.5),
    "acq.lse_level_fraction": ("float", 0.6),
    "acq.lse_beta": ("float", 9.0),
    "search.acquisition_kind": ("kind", "AAS"),
    "search.budget": ("int", 30),
    "search.measurement_stride": ("int", 4),
    "search.decay_halflife": ("float", 10.0),
    "search.prior_field": ("str", ""),
    "search.obstacles": ("str", ""),
    "search.footprint_radius": ("float", 0.0),
    "trajectory.n_primitives": ("int", 6),
    "trajectory.primitive_duration": ("float_auto", AUTO),
    "trajectory.v_min": ("float", 0.0),
    "trajectory.v_max": ("float", 0.1),
    "trajectory.w_min": ("float", -math.pi),
    "trajectory.w_max": ("float", math.pi),
    "trajectory.dt": ("float_auto", AUTO),
    "cem.n_samples": ("int", 200),
    "cem.elite_frac": ("float", 0.1),
    "cem.max_iters": ("int", 30),
    "cem.min_covariance_floor": ("float", 1e-6),
    "cem.convergence_tol": ("float", 1e-4),
    "cem.n_components": ("int", 1),
    "cem.smoothing": ("float", 0.7),
    "probe.position_sd": ("float", 0.0),
    "probe.force_noise_sd": ("float", 0.05),
    "probe.displacement_steps": ("int", 5),
    "probe.max_indent": ("float", 1.0),
    "phantom.n_inclusions": ("int", 2),
    "phantom.amplitude_min": ("float", 3.0),
    "phantom.amplitude_max": ("float", 6.0),
    "phantom.width_min": ("float", 0.05),
    "phantom.width_max": ("float", 0.12),
    "phantom.baseline": ("float", 1.0),
    "phantom.file": ("str", ""),
    "score.truth_fraction": ("float", 0.5),
    "batch.runs": ("int", 100),
    "batch.methods": ("kinds", "AAS,LSE,UNC,EI"),
    "batch.fixed_phantom": ("bool", False),
}


def _parse(key, kind, raw):
    text = str(raw).strip()
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "float_auto":
            return AUTO if text.lower() == AUTO else float(text)
        if kind == "bool":
            low = text.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind == "str":
            return text
        if kind == "kind":
            up = text.upper()
            if up not in KINDS:
                raise ValueError(f"must be one of {', '.join(k.lower() for k in KINDS)}; got {text!r}")
            return up
        if kind == "kinds":
            parts = [p.strip().upper() for p in text.split(",") if p.strip()]
            bad = [p for p in parts if p not in KINDS]
            if bad or not parts:
                raise ValueError(f"methods must be drawn from {', '.join(KINDS)}; got {text!r}")
            return ",".join(parts)
        if kind.startswith("choice:"):
            options = kind.split(":", 1)[1].split(",")
            if text not in options:
                raise ValueError(f"must be one of {options}; got {text!r}")
            return text
    except ValueError as exc:
        raise ConfigError(key, str(exc)) from None
    raise AssertionError(kind)


def parse_text(text):
    """Parse config text into a raw ``{key: string}`` mapping."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(line, f"line {lineno} is not of the form key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key] = value
    return out


def resolve(raw: dict, overrides: dict | None = None) -> dict:
    """Validate ``raw`` against the schema and fill in defaults."""
    merged = dict(raw)
    merged.update(overrides or {})
    for key in merged:
        if key not in SCHEMA:
            raise ConfigError(key, "unknown key")
    resolved = {}
    for key, (kind, default) in SCHEMA.items():
        resolved[key] = _parse(key, kind, merged[key]) if key in merged else default
    return resolved


def load(path, overrides=None) -> dict:
    if path is None:
        return resolve({}, overrides)
    with open(path) as fh:
        raw = parse_text(fh.read())
    base = os.path.dirname(os.path.abspath(path))
    for key in ("search.prior_field", "phantom.file"):
        if raw.get(key):
            raw[key] = os.path.normpath(os.path.join(base, raw[key]))
    return resolve(raw, overrides)


_OBSTACLE = re.compile(r"^\s*(disc|poly)\s*\(([^)]*)\)\s*$", re.IGNORECASE)


def parse_obstacles(text):
    """``disc(x, y, r)`` and ``poly(x1, y1, x2, y2, ...)`` entries separated by ``;``."""
    obstacles = []
    for part in filter(None, (p.strip() for p in text.split(";"))):
        m = _OBSTACLE.match(part)
        if not m:
            raise ConfigError("search.obstacles", f"cannot parse obstacle {part!r}")
        try:
            nums = [float(v) for v in m.group(2).split(",")]
            if m.group(1).lower() == "disc":
                if len(nums) != 3:
                    raise ValueError("disc takes x, y, radius")
                obstacles.append(Disc((nums[0], nums[1]), nums[2]))
            else:
                if len(nums) < 6 or len(nums) % 2:
                    raise ValueError("poly takes at least three x, y pairs")
                obstacles.append(Polygon(tuple(zip(nums[::2], nums[1::2]))))
        except ValueError as exc:
            raise ConfigError("search.obstacles", str(exc)) from None
    return tuple(obstacles)


def _auto(v):
    return None if v == AUTO else v


def build(cfg: dict, mode: str = "discrete", kind: str | None = None) -> SimConfig:
    """Turn a resolved mapping into a :class:`SimConfig`."""
    def guard(key, fn, *args, **kw):
        try:
            return fn(*args, **kw)
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from None

    grid = guard("grid.nx", DomainGrid,
                 (cfg["grid.xmin"], cfg["grid.xmax"], cfg["grid.ymin"], cfg["grid.ymax"]),
                 cfg["grid.nx"], cfg["grid.ny"])
    ell = _auto(cfg["gp.lengthscale"])
    kernel = guard("gp.lengthscale", Kernel,
                   0.1 * grid.width if ell is None else ell,
                   cfg["gp.signal_variance"], cfg["gp.noise_variance"])
    sd = cfg["probe.position_sd"]
    position_noise = sd**2 * np.eye(2)
    probe = guard("probe.position_sd", ProbeModel, position_noise, cfg["probe.force_noise_sd"],
                  cfg["probe.displacement_steps"], cfg["probe.max_indent"])
    prior = None
    if cfg["search.prior_field"]:
        try:
            pf = load_field(cfg["search.prior_field"])
        except (OSError, ValueError) as exc:
            raise ConfigError("search.prior_field", str(exc)) from None
        if pf.grid != grid:
            raise ConfigError("search.prior_field", "prior field grid does not match grid.* keys")
        prior = pf.values
    ce = guard("cem.n_samples", CemConfig,
               n_samples=cfg["cem.n_samples"], elite_frac=cfg["cem.elite_frac"],
               max_iters=cfg["cem.max_iters"], min_covariance_floor=cfg["cem.min_covariance_floor"],
               convergence_tol=cfg["cem.convergence_tol"], seed=cfg["seed"],
               n_components=cfg["cem.n_components"], smoothing=cfg["cem.smoothing"])
    search = guard(
        "search.acquisition_kind", SearchConfig,
        acquisition_kind=kind or cfg["search.acquisition_kind"],
        grid=grid,
        kernel=kernel,
        scale_floor=cfg["gp.scale_floor"],
        gp_input_noise=position_noise if (cfg["gp.use_input_noise"] and sd > 0) else None,
        regions=(cfg["acq.regions_x"], cfg["acq.regions_y"]),
        confidence=cfg["acq.confidence"],
        tau_rule=cfg["acq.tau_rule"],
        tau_fraction=cfg["acq.tau_fraction"],
        lse_level_fraction=cfg["acq.lse_level_fraction"],
        lse_beta=cfg["acq.lse_beta"],
        prior_field=prior,
        decay_halflife=cfg["search.decay_halflife"],
        obstacles=parse_obstacles(cfg["search.obstacles"]),
        footprint=guard("search.footprint_radius", RobotFootprint, cfg["search.footprint_radius"]),
        budget=cfg["search.budget"],
        measurement_stride=cfg["search.measurement_stride"],
        n_primitives=cfg["trajectory.n_primitives"],
        primitive_duration=_auto(cfg["trajectory.primitive_duration"]),
        v_bounds=(cfg["trajectory.v_min"], cfg["trajectory.v_max"]),
        w_bounds=(cfg["trajectory.w_min"], cfg["trajectory.w_max"]),
        dt=_auto(cfg["trajectory.dt"]),
        cem=ce,
    )
    return SimConfig(
        search=search,
        probe=probe,
        n_inclusions=cfg["phantom.n_inclusions"],
        amplitude_range=(cfg["phantom.amplitude_min"], cfg["phantom.amplitude_max"]),
        width_range=(cfg["phantom.width_min"], cfg["phantom.width_max"]),
        baseline=cfg["phantom.baseline"],
        truth_fraction=cfg["score.truth_fraction"],
        mode=mode,
    )


def fixed_phantom(cfg: dict):
    """The user-supplied ground truth, if ``phantom.file`` is set."""
    if not cfg["phantom.file"]:
        return None
    try:
        return load_field(cfg["phantom.file"])
    except (OSError, ValueError) as exc:
        raise ConfigError("phantom.file", str(exc)) from None


def dump(cfg: dict) -> str:
    """Serialize a resolved mapping back to config text."""
    return "".join(f"{k} = {v!r}\n" if isinstance(v, float) else f"{k} = {v}\n" for k, v in cfg.items())
