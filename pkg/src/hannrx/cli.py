"""Command-line entry point: ``hannrx run --config <path> --out <dir> ...``."""

from __future__ import annotations

import argparse
import logging
import sys

from .errors import ConfigError
from .scenario import audit_rows, load_config, preset, run_scenario


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hannrx",
                                     description="Hann-windowed OFDM receiver simulations")
    sub = parser.add_subparsers(dest="command", required=True)
    run = sub.add_parser("run", help="run a scenario and write curve data")
    run.add_argument("--config", help="YAML scenario file")
    run.add_argument("--preset", help="named scenario (paper-shape, paper-full)")
    run.add_argument("--out", required=True, help="output directory")
    run.add_argument("--trials", type=int, help="override the trial count")
    run.add_argument("--seed", type=int, help="override the master seed")
    run.add_argument("--audit", action="store_true", help="print the op-count report")
    run.add_argument("--psd-only", action="store_true",
                     help="skip the Monte Carlo run, write PSD and audit data only")
    run.add_argument("--fresh", action="store_true",
                     help="ignore any journal left by an earlier run")
    run.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config and args.preset:
            raise ConfigError("--preset", "give either --config or --preset, not both")
        if args.config:
            config = load_config(args.config)
        elif args.preset:
            config = preset(args.preset)
        else:
            raise ConfigError("--config", "a config file or --preset is required")
        if args.trials is not None:
            if args.trials < 1:
                raise ConfigError("trials", "must be >= 1")
            config.trials = args.trials
        if args.seed is not None:
            config.master_seed = args.seed
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        result = run_scenario(config, args.out, resume=not args.fresh,
                              psd_only=args.psd_only)
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if args.audit:
        print(audit_rows(config)[0].to_text())
    for name, path in result.paths.items():
        print(f"{name}: {path}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
