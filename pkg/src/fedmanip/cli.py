"""Command line entry point: ``run``, ``sweep`` and ``verify`` subcommands."""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

from .config import ConfigError, ExperimentConfig, load_config, parse_set_option
from .harness import SWEEPABLE_FIELDS, run_experiment, run_sweep
from .verify import SUITES, run_suite

OUT_DIR_ENV = "FEDMANIP_OUT"


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedmanip",
        description="Deterministic federated fine-tuning simulator with "
                    "stealthy model-manipulation attacks and defenses.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one experiment")
    run.add_argument("--config", type=Path, help="TOML configuration file")
    run.add_argument("--out", type=Path, help="output directory")
    run.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="SECTION.KEY=VALUE", help="override one configuration value",
    )

    sweep = sub.add_parser("sweep", help="run one experiment per axis value")
    sweep.add_argument("--config", type=Path, help="TOML configuration file")
    sweep.add_argument("--axis", required=True, choices=SWEEPABLE_FIELDS)
    sweep.add_argument("--values", required=True, help="comma-separated values")
    sweep.add_argument("--out", type=Path, required=True, help="output root directory")
    sweep.add_argument(
        "--set", dest="overrides", action="append", default=[],
        metavar="SECTION.KEY=VALUE", help="override one configuration value",
    )

    verify = sub.add_parser("verify", help="run an invariant suite")
    verify.add_argument("--suite", required=True, choices=sorted(SUITES))
    return parser


def _load(args) -> ExperimentConfig:
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    for option in args.overrides:
        parse_set_option(cfg, option)
    cfg.validate()
    return cfg


def _out_dir(args, cfg: ExperimentConfig) -> Path:
    if args.out is not None:
        return args.out
    env = os.environ.get(OUT_DIR_ENV)
    if env:
        return Path(env)
    return Path(cfg.out_dir)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        if args.command == "run":
            cfg = _load(args)
            out = _out_dir(args, cfg)
            summary = run_experiment(cfg, out)
            print(f"run complete: {out}")
            print(f"  final global accuracy  {summary['final_global_accuracy']:.4f}")
            print(f"  best global accuracy   {summary['best_global_accuracy']:.4f}")
            print(f"  wall time              {summary['wall_time_s']:.2f} s")
            return 0
        if args.command == "sweep":
            cfg = _load(args)
            values = [v.strip() for v in args.values.split(",") if v.strip()]
            if not values:
                raise ConfigError("--values must list at least one value")
            index = run_sweep(cfg, args.axis, values, args.out)
            print(f"sweep complete: {len(index['runs'])} runs in {args.out}")
            for entry in index["runs"]:
                print(f"  {args.axis}={entry['value']}: "
                      f"final accuracy {entry['final_global_accuracy']:.4f}")
            return 0
        if args.command == "verify":
            results = run_suite(args.suite)
            width = max(len(r.name) for r in results)
            failures = 0
            for r in results:
                status = "PASS" if r.passed else "FAIL"
                failures += 0 if r.passed else 1
                print(f"{status}  {r.name:<{width}}  [{r.tolerance}]  {r.detail}")
            print(f"{len(results) - failures}/{len(results)} checks passed")
            return 0 if failures == 0 else 1
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
