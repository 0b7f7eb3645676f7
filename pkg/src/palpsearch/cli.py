"""Command-line runner: simulated searches, batches, phantoms and replay checks.

Exit codes: 0 success, 2 configuration error, 3 runtime failure (including a
failed ``validate``).
"""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import json
import logging
import os
import sys
import tempfile

import numpy as np

from . import __version__
from . import config as config_mod
from .config import ConfigError
from .search import acquisition_field, agent_regions, clearance, total_acquisition
from .sim import field_to_csv_text, phantom_for, run_batch, simulate, truth_labels
from . import acquisition as acq

log = logging.getLogger("palpsearch")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def atomic_write(path, text):
    """Write via a temp file in the same directory and rename into place."""
    d = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _now():
    return _dt.datetime.now(_dt.timezone.utc).isoformat()


def _write_all(out, files):
    """Render every artifact in memory first so a failure leaves nothing half-written."""
    os.makedirs(out, exist_ok=True)
    for name, text in files.items():
        atomic_write(os.path.join(out, name), text)
    return sorted(files)


def _manifest(out, command, cfg, started, outputs, extra=None):
    doc = {
        "command": command,
        "version": __version__,
        "seed": cfg["seed"],
        "config": cfg,
        "started": started,
        "finished": _now(),
        "outputs": outputs,
    }
    doc.update(extra or {})
    atomic_write(os.path.join(out, "manifest.json"), json.dumps(doc, indent=2) + "\n")


def _check_phantom_grid(cfg, sim_cfg):
    phantom = config_mod.fixed_phantom(cfg)
    if phantom is not None and phantom.grid != sim_cfg.search.grid:
        raise ConfigError("phantom.file", "phantom grid does not match grid.* keys")
    return phantom


def _region_rows(result, sim_cfg):
    sc = sim_cfg.search
    regions = agent_regions(sc, result.state.gp)
    labels = acq.classify_regions(result.state.gp, regions, sc.grid)
    return [(g, *r, bool(lab), bool(tr))
            for g, (r, lab, tr) in enumerate(zip(regions.regions, labels, result.truth))]


def _common_files(result, sim_cfg):
    grid = sim_cfg.search.grid
    sc = sim_cfg.search
    field = total_acquisition(acquisition_field(result.state, sc), sc, result.state.cycle)
    return {
        "acquisition_field.csv": field_to_csv_text(field, grid),
        "estimated_field.csv": field_to_csv_text(result.estimated_field(), grid),
        "ground_truth.csv": field_to_csv_text(result.phantom.values, grid),
        "region_labels.csv": csv_text(
            ["region", "xmin", "xmax", "ymin", "ymax", "label", "truth"],
            _region_rows(result, sim_cfg)),
    }


def cmd_run_discrete(cfg, out):
    started = _now()
    sim_cfg = config_mod.build(cfg, "discrete")
    phantom = _check_phantom_grid(cfg, sim_cfg)
    result = simulate(sim_cfg, cfg["seed"], phantom)
    rows = [(ev["step"], ev["x"], ev["y"], ev["value"], ev["recall"]) for ev in result.state.events]
    files = {"probes.csv": csv_text(["step", "x", "y", "stiffness_estimate", "recall"], rows)}
    files.update(_common_files(result, sim_cfg))
    outputs = _write_all(out, files)
    _manifest(out, "run-discrete", cfg, started, outputs + ["manifest.json"],
              {"final_recall": result.recall.recall[-1] if result.recall.recall else None})
    log.info("discrete run: %d probes, final recall %s", len(rows),
             result.recall.recall[-1] if rows else "n/a")
    return result


def cmd_run_continuous(cfg, out):
    started = _now()
    sim_cfg = config_mod.build(cfg, "continuous")
    phantom = _check_phantom_grid(cfg, sim_cfg)
    result = simulate(sim_cfg, cfg["seed"], phantom)
    probes, traj, trace = [], [], []
    step, t0 = 0, 0.0
    for ev in result.state.events:
        for (x, y), v in zip(ev["measured"], ev["values"]):
            step += 1
            probes.append((step, x, y, v, ev["recall"]))
        path = ev["path"]
        for t, (x, y, th) in zip(path.times, path.poses):
            traj.append((ev["cycle"], t0 + t, x, y, th))
        t0 += float(path.times[-1])
        for rec in ev["ce_trace"]:
            trace.append((ev["cycle"], rec["iteration"], rec["best_cost"]))
    files = {
        "probes.csv": csv_text(["step", "x", "y", "stiffness_estimate", "recall"], probes),
        "trajectory.csv": csv_text(["cycle", "time", "x", "y", "theta"], traj),
        "ce_trace.csv": csv_text(["cycle", "iteration", "best_cost"], trace),
    }
    files.update(_common_files(result, sim_cfg))
    outputs = _write_all(out, files)
    _manifest(out, "run-continuous", cfg, started, outputs + ["manifest.json"], {
        "final_recall": result.recall.recall[-1] if result.recall.recall else None,
        "diagnostics": {k: v for k, v in result.state.diagnostics.items() if k != "cycle_best_costs"},
    })
    log.info("continuous run: %d cycles, %d measurements", result.state.cycle, step)
    return result


def cmd_batch(cfg, out, mode="discrete", n_jobs=1):
    started = _now()
    sim_cfg = config_mod.build(cfg, mode)
    if cfg["phantom.file"]:
        raise ConfigError("phantom.file", "batch runs generate their own phantoms")
    kinds = tuple(cfg["batch.methods"].split(","))
    report = run_batch(sim_cfg, cfg["batch.runs"], cfg["seed"], kinds,
                       fixed_phantom=cfg["batch.fixed_phantom"], n_jobs=n_jobs)
    rows = []
    for kind in kinds:
        for i, (m, s) in enumerate(zip(report.mean[kind], report.sd[kind])):
            rows.append((kind.lower(), report.steps[kind][i], m, s, report.n_effective[kind]))
    per_run = [(kind.lower(), seed, report.steps[kind][i], r)
               for kind in kinds for seed, curve in report.runs[kind] for i, r in enumerate(curve)]
    files = {
        "recall_curves.csv": csv_text(
            ["method", "step", "mean_recall", "sd_recall", "n_effective"], rows),
        "recall_runs.csv": csv_text(["method", "seed", "step", "recall"], per_run),
    }
    outputs = _write_all(out, files)
    _manifest(out, "batch", cfg, started, outputs + ["manifest.json"], {
        "mode": mode,
        "failures": {k: [[s, msg] for s, msg in v] for k, v in report.failures.items()},
        "final_mean_recall": {k: (float(report.mean[k][-1]) if len(report.mean[k]) else None)
                              for k in kinds},
    })
    for kind in kinds:
        if len(report.mean[kind]):
            log.info("%s: final mean recall %.3f (n=%d)", kind, report.mean[kind][-1],
                     report.n_effective[kind])
    return report


def cmd_gen_phantom(cfg, out):
    started = _now()
    sim_cfg = config_mod.build(cfg)
    phantom = phantom_for(sim_cfg, cfg["seed"])
    regions = sim_cfg.search.region_grid()
    labels = truth_labels(phantom, regions, sim_cfg.truth_fraction * phantom.max)
    files = {
        "phantom.csv": field_to_csv_text(phantom.values, phantom.grid),
        "truth_labels.csv": csv_text(
            ["region", "xmin", "xmax", "ymin", "ymax", "truth"],
            [(g, *r, bool(t)) for g, (r, t) in enumerate(zip(regions.regions, labels))]),
    }
    outputs = _write_all(out, files)
    _manifest(out, "gen-phantom", cfg, started, outputs + ["manifest.json"],
              {"bumps": phantom.provenance.get("bumps")})
    return phantom


COMMANDS = {
    "run-discrete": cmd_run_discrete,
    "run-continuous": cmd_run_continuous,
    "gen-phantom": cmd_gen_phantom,
}


def replay(manifest_path, out):
    """Re-run the command recorded in a manifest into ``out``."""
    with open(manifest_path) as fh:
        doc = json.load(fh)
    cfg = config_mod.resolve({k: v for k, v in doc["config"].items()})
    cmd = doc["command"]
    if cmd == "batch":
        cmd_batch(cfg, out, doc.get("mode", "discrete"))
    else:
        COMMANDS[cmd](cfg, out)
    return doc, cfg


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def validate(manifest_path):
    """Replay a manifest, compare CSV bytes and check run invariants.

    Returns a list of ``(check, ok, detail)``.
    """
    src = os.path.dirname(os.path.abspath(manifest_path))
    checks = []
    with tempfile.TemporaryDirectory() as tmp:
        doc, cfg = replay(manifest_path, tmp)
        for name in doc["outputs"]:
            if not name.endswith(".csv"):
                continue
            a = os.path.join(src, name)
            b = os.path.join(tmp, name)
            if not os.path.exists(a):
                checks.append((f"replay {name}", False, "missing from original output"))
                continue
            with open(a, "rb") as fa, open(b, "rb") as fb:
                same = fa.read() == fb.read()
            checks.append((f"replay {name}", same, "byte-identical" if same else "differs"))

    if doc["command"] == "run-continuous":
        sim_cfg = config_mod.build(cfg, "continuous")
        sc = sim_cfg.search
        rows = _read_csv(os.path.join(src, "trajectory.csv"))
        pts = np.array([[float(r["x"]), float(r["y"])] for r in rows]).reshape(-1, 2)
        c = clearance(pts, sc.obstacles, sc.footprint, sc.grid.bounds)
        bad = int(np.sum(c < 0))
        checks.append(("trajectory clearance >= 0", bad == 0, f"{bad} of {len(pts)} poses violate"))
    if doc["command"] in ("run-discrete", "run-continuous"):
        probes = _read_csv(os.path.join(src, "probes.csv"))
        steps = [int(r["step"]) for r in probes]
        ok = steps == list(range(1, len(steps) + 1))
        checks.append(("probe log contiguous", ok, f"{len(steps)} measurements"))
        rec = [float(r["recall"]) for r in probes]
        ok = all(0.0 <= v <= 1.0 for v in rec)
        checks.append(("recall within [0, 1]", ok, ""))
    return checks


def build_parser():
    p = argparse.ArgumentParser(prog="palpsearch", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", metavar="PATH", help="key = value config file")
        sp.add_argument("--out", metavar="DIR", required=out_required, help="output directory")
        sp.add_argument("--seed", type=int, help="overrides the seed key")
        sp.add_argument("--method", choices=["aas", "lse", "unc", "ei"],
                        help="overrides search.acquisition_kind (batch: batch.methods)")

    for name in ("run-discrete", "run-continuous", "gen-phantom"):
        common(sub.add_parser(name))
    b = sub.add_parser("batch")
    common(b)
    b.add_argument("--runs", type=int, help="overrides batch.runs")
    b.add_argument("--mode", choices=["discrete", "continuous"], default="discrete")
    b.add_argument("--jobs", type=int, default=1, help="worker processes")
    v = sub.add_parser("validate")
    v.add_argument("manifest", nargs="?", help="manifest.json to replay")
    v.add_argument("--out", metavar="DIR", help="directory holding manifest.json")
    return p


def _overrides(args):
    o = {}
    if getattr(args, "seed", None) is not None:
        o["seed"] = str(args.seed)
    if getattr(args, "method", None):
        key = "batch.methods" if args.command == "batch" else "search.acquisition_kind"
        o[key] = args.method
    if getattr(args, "runs", None) is not None:
        o["batch.runs"] = str(args.runs)
    return o


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                        format="%(levelname)s %(message)s")
    try:
        if args.command == "validate":
            path = args.manifest or (args.out and os.path.join(args.out, "manifest.json"))
            if not path:
                print("validate needs a manifest path or --out DIR", file=sys.stderr)
                return EXIT_CONFIG
            checks = validate(path)
            for name, ok, detail in checks:
                print(f"{'PASS' if ok else 'FAIL'} {name} {detail}".rstrip())
            return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_RUNTIME
        cfg = config_mod.load(args.config, _overrides(args))
        if args.command == "batch":
            cmd_batch(cfg, args.out, args.mode, args.jobs)
        else:
            COMMANDS[args.command](cfg, args.out)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, json.JSONDecodeError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except Exception as exc:  # any other failure is a runtime failure
        log.debug("runtime failure", exc_info=True)
        print(f"runtime failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
