"""Command-line entry point.

Exit codes: 0 campaign completed (per-step solver failures are recorded in the
rows), 2 configuration error, 3 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path

import numpy as np

from . import bench, config, ofdm
from .results import cdf_to_csv, fmt, rows_to_csv, summarize
from .sim import ESTIMATORS, scenario_hash

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


class UsageError(ValueError):
    pass


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _seed(text):
    v = int(text)
    if not 0 <= v < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return v


def _names(text, allowed):
    if text.strip().lower() == "none":
        return ()
    out = tuple(t.strip() for t in text.split(",") if t.strip())
    bad = [t for t in out if t not in allowed]
    if bad:
        raise argparse.ArgumentTypeError(f"unknown estimator(s) {bad}; choose from {list(allowed)}")
    return out


def _global_flags(p: argparse.ArgumentParser, suppress: bool):
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--scenario", default=d("default_cluttered"),
                   help="scenario TOML file or bundled scenario name (default: default_cluttered)")
    p.add_argument("--seed", type=_seed, default=d(0))
    p.add_argument("--trials", type=_positive_int, default=d(20))
    p.add_argument("--out", default=d("."), help="output directory (created if missing)")
    p.add_argument("--planar", action="store_true", default=d(False),
                   help="freeze the solver z coordinate at the target height")
    p.add_argument("--threads", type=_positive_int, default=d(1), help="worker threads (wall time only)")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="mstatic", description="Multi-static robust positioning workbench.")
    _global_flags(p, suppress=False)
    sub = p.add_subparsers(dest="command", required=True)

    c = sub.add_parser("compare", help="estimator comparison: rows.csv, cdf_<estimator>.csv, summary.json")
    _global_flags(c, suppress=True)
    c.add_argument("--estimators", type=lambda t: _names(t, ESTIMATORS), default=ESTIMATORS)
    c.add_argument("--random-init", type=lambda t: _names(t, ESTIMATORS[:4]), default=("cauchy",),
                   help="estimators also run from a random initial guess ('none' to skip)")

    s = sub.add_parser("sweep", help="Cauchy RMSE over a geometric parameter grid: sweep.csv")
    _global_flags(s, suppress=True)
    s.add_argument("--param", choices=bench.SWEEP_PARAMS, required=True,
                   help="alpha: GD step size; eta: Cauchy scale in units of the robust residual scale")
    s.add_argument("--from", dest="start", type=float)
    s.add_argument("--to", dest="stop", type=float)
    s.add_argument("--steps", type=int)
    s.add_argument("--values", help="explicit comma-separated values instead of --from/--to/--steps")

    t = sub.add_parser("tx-modes", help="single-transmitter vs round-robin (squared l2): cdf_<mode>.csv")
    _global_flags(t, suppress=True)

    k = sub.add_parser("track", help="campaign plus Kalman filter: track.csv, track_summary.json")
    _global_flags(k, suppress=True)
    k.add_argument("--clutter", choices=("on", "off"), default="on",
                   help="off drops the scenario's obstacles")
    k.add_argument("--estimator", choices=ESTIMATORS[:4], default="cauchy")

    f = sub.add_parser("frontend-demo", help="one link through the OFDM chain: periodogram.bin, frontend.json")
    _global_flags(f, suppress=True)
    f.add_argument("--tx", type=int)
    f.add_argument("--rx", type=int)
    f.add_argument("--snr-db", type=float, default=20.0)
    f.add_argument("--no-clutter-removal", action="store_true")
    return p


# --------------------------------------------------------------------------- output


def _json(doc) -> str:
    return json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n"


class _Writer:
    def __init__(self, out: str):
        self.dir = Path(out)
        self.dir.mkdir(parents=True, exist_ok=True)

    def text(self, name: str, body: str):
        (self.dir / name).write_text(body, encoding="utf-8", newline="")

    def binary(self, name: str, body: bytes):
        (self.dir / name).write_bytes(body)


def _meta(args, cfg) -> dict:
    return {"scenario": cfg.source, "scenario_hash": scenario_hash(cfg.scenario),
            "seed": args.seed, "trials": args.trials}


def _opts(args) -> bench.RunOptions:
    return bench.RunOptions(args.trials, args.seed, args.threads, args.planar)


# --------------------------------------------------------------------------- commands


def cmd_compare(args, cfg, w: _Writer) -> int:
    res = bench.compare(cfg, _opts(args), args.estimators, args.random_init)
    w.text("rows.csv", rows_to_csv(res.rows))
    stats = summarize(res.rows)
    for tag in stats:
        w.text(f"cdf_{tag}.csv", cdf_to_csv(res.errors(tag)))
    w.text("summary.json", _json({"meta": _meta(args, cfg),
                                  "estimators": {k: v.as_dict() for k, v in stats.items()}}))
    return EXIT_OK


def cmd_sweep(args, cfg, w: _Writer) -> int:
    if args.values:
        try:
            values = [float(v) for v in args.values.split(",") if v.strip()]
        except ValueError:
            raise UsageError("--values must be comma-separated numbers") from None
        if not values or any(not v > 0 for v in values):
            raise UsageError("--values must be positive")
    else:
        if None in (args.start, args.stop, args.steps):
            raise UsageError("sweep needs --from, --to and --steps (or --values)")
        values = bench.sweep_values(args.start, args.stop, args.steps)
    points = bench.sweep(cfg, _opts(args), args.param, values)
    buf = io.StringIO()
    cw = csv.writer(buf, lineterminator="\n")
    cw.writerow(["param_value", "rmse_m", "failure_rate"])
    for pt in points:
        cw.writerow([fmt(pt.param_value), fmt(pt.rmse_m), fmt(pt.failure_rate)])
    w.text("sweep.csv", buf.getvalue())
    return EXIT_OK


def cmd_tx_modes(args, cfg, w: _Writer) -> int:
    modes = bench.tx_modes(cfg, _opts(args))
    errors = {m: np.array([r.error_m for r in rows]) for m, rows in modes.items()}
    summary = {}
    for m, rows in modes.items():
        w.text(f"cdf_{m}.csv", cdf_to_csv(errors[m]))
        st = summarize(rows)["l2"].as_dict()
        st["estimator"] = "l2"
        summary[m] = st
    single = {m: e for m, e in errors.items() if m != "rr"}
    w.text("tx_modes_summary.json", _json({
        "meta": _meta(args, cfg), "modes": summary,
        "max_pairwise_ks_single_tx": bench.max_pairwise_ks(single)}))
    return EXIT_OK


def cmd_track(args, cfg, w: _Writer) -> int:
    rows = bench.track(cfg, _opts(args), clutter=args.clutter == "on", estimator=args.estimator)
    buf = io.StringIO()
    cw = csv.writer(buf, lineterminator="\n")
    cw.writerow(["trial", "step", "true_x", "true_y", "true_z", "raw_x", "raw_y", "raw_z",
                 "kf_x", "kf_y", "kf_z", "raw_err", "kf_err"])
    for r in rows:
        cw.writerow([r.trial, r.step, *map(fmt, r.true_xyz), *map(fmt, r.raw_xyz), *map(fmt, r.kf_xyz),
                     fmt(r.raw_err), fmt(r.kf_err)])
    w.text("track.csv", buf.getvalue())
    summary = bench.track_summary(rows)
    summary.update(meta=_meta(args, cfg), estimator=args.estimator, clutter=args.clutter)
    w.text("track_summary.json", _json(summary))
    return EXIT_OK


def cmd_frontend_demo(args, cfg, w: _Writer) -> int:
    res = bench.frontend_demo(cfg, args.seed, args.tx, args.rx, args.snr_db, not args.no_clutter_removal)
    w.binary("periodogram.bin", ofdm.periodogram_to_bytes(res.periodogram))
    doc = res.as_dict()
    doc["meta"] = _meta(args, cfg)
    w.text("frontend.json", _json(doc))
    return EXIT_OK


COMMANDS = {
    "compare": cmd_compare,
    "sweep": cmd_sweep,
    "tx-modes": cmd_tx_modes,
    "track": cmd_track,
    "frontend-demo": cmd_frontend_demo,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage, which matches the config-error code
        return int(exc.code or 0)
    try:
        cfg = config.load(args.scenario)
    except config.ConfigError as exc:
        print(f"mstatic: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"mstatic: cannot read scenario: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        writer = _Writer(args.out)
        return COMMANDS[args.command](args, cfg, writer)
    except OSError as exc:
        print(f"mstatic: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (UsageError, config.ConfigError, ValueError, KeyError) as exc:
        print(f"mstatic: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
