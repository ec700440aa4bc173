"""Command-line entry point: ``simulate``, ``sweep`` and ``validate``.

Exit codes: 0 success, 1 validation failure, 2 configuration error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace

from .config import SWEEP_PARAMS, ConfigError, load_config, make_config

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _config(args):
    cfg = load_config(args.config) if args.config else make_config(args.profile)
    if getattr(args, "seed", None) is not None:
        if args.seed < 0:
            raise ConfigError("seed must be non-negative")
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "trials", None) is not None:
        if args.trials < 1:
            raise ConfigError("--trials must be at least 1")
        cfg = replace(cfg, n_trials=args.trials)
    return cfg.validate()


def _cmd_simulate(args) -> int:
    from .experiment import emit_csv, simulate

    cfg = _config(args)
    res = simulate(cfg, jobs=args.jobs, record_timing=args.record_timing)
    paths = emit_csv(res, args.out)
    for a in res.aggregates:
        p = "-" if a.mean_power_w is None else f"{a.mean_power_w:.2f} W"
        print(f"{a.scheme:<20s} feasible {a.feasibility_rate:5.2f}  power {p}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def _cmd_sweep(args) -> int:
    from .experiment import emit_csv, sweep

    cfg = _config(args)
    values = [v.strip() for v in args.values.split(",") if v.strip()]
    if not values:
        raise ConfigError("--values needs at least one value")
    res = sweep(cfg, args.param, values, jobs=args.jobs, record_timing=args.record_timing)
    paths = emit_csv(res, args.out)
    for a in res.aggregates:
        p = "-" if a.mean_power_w is None else f"{a.mean_power_w:.2f} W"
        print(f"{a.param}={a.value:<8s} {a.scheme:<20s} feasible {a.feasibility_rate:5.2f}  power {p}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return EXIT_OK


def _cmd_validate(args) -> int:
    from .validation import format_report, run_checks

    checks = run_checks(fast=args.fast)
    print(format_report(checks))
    return EXIT_OK if all(c.ok for c in checks) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="leohandover", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true", help="log solver warnings")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="key = value config file (default: built-in profile)")
        p.add_argument("--profile", default="desk", help="built-in profile when --config is absent")
        p.add_argument("--out", required=True, help="output directory for the CSV files")
        p.add_argument("--jobs", type=int, default=1, help="worker processes for trials")
        p.add_argument("--record-timing", action="store_true",
                       help="fill the solve_ms column (makes output non-deterministic)")

    p = sub.add_parser("simulate", help="run all schemes over n_trials trials")
    common(p)
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.add_argument("--trials", type=int, help="number of trials (overrides the config)")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep", help="aggregate over one parameter")
    common(p)
    p.add_argument("--param", required=True, choices=sorted(SWEEP_PARAMS))
    p.add_argument("--values", required=True, help="comma-separated values, e.g. 0.05,0.1,0.2")
    p.add_argument("--trials", type=int, help="trials per value")
    p.add_argument("--seed", type=int, help="master seed (overrides the config)")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("validate", help="run the built-in invariant checks")
    p.add_argument("--fast", action="store_true", help="fewer samples and draws")
    p.set_defaults(func=_cmd_validate)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if getattr(args, "jobs", 1) < 1:
            raise ConfigError("--jobs must be at least 1")
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
