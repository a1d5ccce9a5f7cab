"""Command-line entry point: ``binoloc {run,follow,match,search}``.

The CLI is a thin shell over the library. Configuration is merged as
defaults <- ``--config`` file <- ``BINOLOC_SEED`` <- command-line flags.

Exit codes: 0 success, 1 failure threshold exceeded (or a failed single
trial), 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

from .config import CAMPAIGNS, ConfigError, SimConfig, apply_flat, load_file
from .geometry import MapError, load_map
from .simulator import (
    TRIAL_COLUMNS,
    _trial_row,
    run_campaign,
    run_trial,
    write_csv,
    write_manifest,
    write_report,
    write_trace,
)

log = logging.getLogger("binoloc")

EXIT_OK = 0
EXIT_FAILURES = 1
EXIT_USAGE = 2
SEED_ENV = "BINOLOC_SEED"
HIST_COLUMNS = ("bin_low", "bin_high", "count")

# flag attribute -> config key
_FLAG_KEYS = {
    "campaign": "sim.campaign",
    "map": "sim.map",
    "trials": "sim.trials",
    "seed": "sim.seed",
    "sensor_noise": "sensor.noise_factor",
    "w_hat": "pf.w_hat",
}


class UsageError(Exception):
    def __init__(self, key: str, message: str):
        super().__init__(f"{key}: {message}")
        self.key = key


@dataclass(frozen=True)
class RunConfig:
    command: str
    sim: SimConfig
    out: Path
    verbosity: int = 0
    workers: int = 1
    hist_width: float = 0.05
    trace: bool = False


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="FILE", help="flat 'key = value' config file")
    common.add_argument("--map", help="map file path or bundled name (map1, map2)")
    common.add_argument("--trials", type=int, help="trials per campaign cell")
    common.add_argument("--seed", type=int, help="master seed (trial seed = master XOR index)")
    common.add_argument("--sensor-noise", type=float, help="sensor noise factor in [0, 1]")
    common.add_argument("--w-hat", type=float, help="particle weight for an agreeing reading, in (0.5, 1)")
    common.add_argument("--workers", type=int, default=1, help="worker processes (default 1)")
    common.add_argument("--out", default="binoloc-out", help="output directory (default binoloc-out)")
    common.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="any config key, e.g. --set pf.n_particles=20000 (repeatable)",
    )
    common.add_argument("--hist-width", type=float, default=0.05, help="histogram bin width")
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="binoloc",
        description="Boundary-following localization with a single binary sensor.",
    )
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    run = sub.add_parser("run", parents=[common], help="run a campaign and write CSVs")
    run.add_argument("--campaign", choices=CAMPAIGNS)
    run.add_argument("--trace", action="store_true", help="also write trace_<seed>.csv per trial")
    sub.add_parser("follow", parents=[common], help="single wall-following trial with trace")
    sub.add_parser("match", parents=[common], help="single land-navigation trial with trace")
    sub.add_parser("search", parents=[common], help="single full-pipeline trial with trace")
    return parser


def _flag_overrides(args) -> dict[str, str]:
    flat: dict[str, str] = {}
    for item in args.set:
        key, sep, val = item.partition("=")
        if not sep or not key.strip():
            raise UsageError("--set", f"expected KEY=VALUE, got {item!r}")
        flat[key.strip()] = val.strip()
    for attr, key in _FLAG_KEYS.items():
        val = getattr(args, attr, None)
        if val is not None:
            flat[key] = str(val)
    return flat


def parse_args(argv) -> RunConfig:
    """Parse ``argv`` into a validated RunConfig.

    Raises UsageError (naming the offending key) for bad values; argparse
    itself exits with status 2 on unknown flags.
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        raise UsageError("command", "missing subcommand")

    cfg = SimConfig()
    try:
        if args.config:
            cfg = apply_flat(cfg, load_file(args.config))
        env_seed = os.environ.get(SEED_ENV)
        if env_seed not in (None, ""):
            try:
                cfg = apply_flat(cfg, {"sim.seed": env_seed})
            except ConfigError as exc:
                raise UsageError(SEED_ENV, str(exc)) from None
        cfg = apply_flat(cfg, _flag_overrides(args))
    except ConfigError as exc:
        raise UsageError(exc.key, str(exc).split(": ", 1)[-1]) from None

    try:
        load_map(cfg.map)
    except MapError as exc:
        raise UsageError("sim.map", str(exc)) from None
    if args.workers < 1:
        raise UsageError("--workers", "must be >= 1")
    if not args.hist_width > 0:
        raise UsageError("--hist-width", "must be positive")
    out = Path(args.out)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise UsageError("--out", f"cannot create {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise UsageError("--out", f"{out} is not writable")
    return RunConfig(
        command=args.command,
        sim=cfg,
        out=out,
        verbosity=args.verbose,
        workers=args.workers,
        hist_width=args.hist_width,
        trace=getattr(args, "trace", False),
    )


def emit_histogram(records, bin_width: float, key: str = "dx") -> list[tuple[float, float, int]]:
    """Fixed-width histogram rows ``(bin_low, bin_high, count)``.

    ``records`` may hold numbers or trial records (``key`` picks the
    attribute). Missing values are dropped; bins are half-open and cover
    ``[0, max]``, so the counts add up to the number of values kept.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    vals = []
    for r in records:
        v = r if r is None or isinstance(r, (int, float)) else getattr(r, key)
        if v is not None and math.isfinite(v):
            if v < 0:
                raise ValueError("histogram values must be >= 0")
            vals.append(float(v))
    if not vals:
        raise ValueError("no values to histogram")
    idx = [int(math.floor(v / bin_width)) for v in vals]
    counts = [0] * (max(idx) + 1)
    for i in idx:
        counts[i] += 1
    return [(i * bin_width, (i + 1) * bin_width, c) for i, c in enumerate(counts)]


def _write_histograms(records, out: Path, width: float) -> None:
    for key in ("dx", "dphi"):
        try:
            rows = emit_histogram(records, width, key)
        except ValueError:
            continue
        write_csv(out / f"hist_{key}.csv", HIST_COLUMNS, rows)


def _fmt(v) -> str:
    return "n/a" if v is None else (f"{v:.4g}" if isinstance(v, float) else str(v))


def _cmd_run(rc: RunConfig) -> int:
    cfg = rc.sim
    log.info("campaign %s on %s: %d trials per cell, seed %d", cfg.campaign, cfg.map, cfg.trials, cfg.seed)
    report = run_campaign(cfg, workers=rc.workers, keep_traces=rc.trace)
    write_report(report, rc.out)
    if cfg.campaign != "wall-sweep":
        _write_histograms(report.records, rc.out, rc.hist_width)
    s = report.summary
    print(f"campaign {s['campaign']} map {s['map']}: {s['trials']} trials, {s['failures']} failed")
    if cfg.campaign == "wall-sweep":
        for row in report.sweep_rows:
            print(
                f"  noise {row['noise']:.2f} a_mu {row['a_mu']:.2f} a_v {row['a_v']:.2f}: "
                f"mse {_fmt(row['mse_mean'])} v_mean {_fmt(row['v_mean_mean'])} "
                f"loops {row['completed']}/{row['trials']}"
            )
    else:
        print(
            f"  dx mean {_fmt(s['mu_dx'])} sd {_fmt(s['sd_dx'])}; dphi mean {_fmt(s['mu_dphi'])} "
            f"sd {_fmt(s['sd_dphi'])}; time to estimate {_fmt(s['mu_t_estimate'])} s; "
            f"stability {_fmt(s['stability'])}"
        )
    print(f"  results in {rc.out}")
    if report.failure_fraction > cfg.max_failure_fraction:
        print(
            f"failure fraction {report.failure_fraction:.3f} exceeds {cfg.max_failure_fraction}",
            file=sys.stderr,
        )
        return EXIT_FAILURES
    return EXIT_OK


def _cmd_single(rc: RunConfig) -> int:
    cfg = rc.sim
    rec = run_trial(cfg, cfg.seed, rc.command, keep_trace=True)
    write_manifest(rc.out / "manifest", cfg)
    write_csv(rc.out / "trials.csv", TRIAL_COLUMNS, [_trial_row(rec, 0, cfg)])
    write_trace(rc.out / f"trace_{rec.seed}.csv", rec.trace)
    print(f"{rc.command} trial seed {rec.seed} on {cfg.map}: {'FAILED' if rec.failed else 'ok'}")
    if rc.command == "follow":
        print(f"  loop {rec.loop_completed} mse {_fmt(rec.mse)} m^2 v_mean {_fmt(rec.v_mean)} m/s")
    else:
        print(
            f"  land-nav after {_fmt(rec.t_estimate)} s: vertex {_fmt(rec.vertex)} "
            f"dx {_fmt(rec.landnav_dx)} dphi {_fmt(rec.landnav_dphi)}"
        )
    if rc.command == "search":
        print(f"  filter converged {rec.converged}: dx {_fmt(rec.pf_dx)} dphi {_fmt(rec.pf_dphi)}")
    print(f"  trace in {rc.out / f'trace_{rec.seed}.csv'}")
    return EXIT_FAILURES if rec.failed else EXIT_OK


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    if not argv:
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        rc = parse_args(argv)
    except SystemExit as exc:  # argparse usage errors and --help
        return int(exc.code or 0)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"binoloc: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.WARNING - 10 * min(rc.verbosity, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    if rc.command == "run":
        return _cmd_run(rc)
    return _cmd_single(rc)


if __name__ == "__main__":
    sys.exit(main())
