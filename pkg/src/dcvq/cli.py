"""Command-line entry point: ``dcvq run|bounds|inspect``."""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys

import numpy as np

from dcvq.bounds import composite_bound
from dcvq.errors import ConfigError
from dcvq.experiments import (
    OUTPUT_ROOT_ENV,
    config_help,
    parse_config,
    point_params,
    run_experiment,
    with_overrides,
)
from dcvq.model import build_dct_sensing_matrix


def _parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcvq",
        description="Distributed channel-optimized quantization of compressed-sensing "
        "measurements: experiment runner and bound calculator.",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog=f"Config file keys (key = value, '#' comments, comma lists):\n{config_help()}\n\n"
        f"Relative output directories resolve under ${OUTPUT_ROOT_ENV} (default: cwd).",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run an experiment grid and write CSV + plot data")
    run.add_argument("config", help="experiment config file")
    run.add_argument("--output", help="override the config's output directory")
    run.add_argument("--fast", action="store_true", help="cap batch sizes for a quick run")
    run.add_argument("--workers", type=int, help="grid points evaluated in parallel")

    bounds = sub.add_parser("bounds", help="print the lower bounds for every grid point")
    bounds.add_argument("config", help="experiment config file")

    inspect = sub.add_parser("inspect", help="summarise a saved quantizer system")
    inspect.add_argument("system", help="JSON-lines system file written by 'run'")
    return parser


def _cmd_run(args) -> int:
    cfg = parse_config(args.config)
    changes = {}
    if args.output:
        changes["output_dir"] = args.output
    if args.fast:
        changes["fast"] = True
    if args.workers:
        changes["workers"] = args.workers
    if changes:
        cfg = with_overrides(cfg, **changes)
    table = run_experiment(cfg)
    out = cfg.output_path()
    print(f"wrote {len(table)} rows to {out / 'results.csv'}")
    bad = table.violations()
    if bad:
        print(f"warning: {len(bad)} row(s) fall below the lower bound by more than 3 standard errors",
              file=sys.stderr)
    return 0


def _cmd_bounds(args) -> int:
    cfg = parse_config(args.config)
    for M, (R1, R2), rho, _ in dict.fromkeys(cfg.grid()):
        p = point_params(cfg, M, rho)
        phi1 = np.asarray(build_dct_sensing_matrix(cfg.N, M, 1))
        phi2 = np.asarray(build_dct_sensing_matrix(cfg.N, M, 2))
        R = R1 + R2 if cfg.quantized else math.inf
        rep = composite_bound(p, phi1, phi2, R, weighting=cfg.weighting, variant=cfg.bound_variant)
        print(json.dumps(rep.as_dict()))
    return 0


def _cmd_inspect(args) -> int:
    from dcvq.quantizer.io import load_system, summarize

    print(json.dumps(summarize(load_system(args.system)), indent=2))
    return 0


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "bounds": _cmd_bounds, "inspect": _cmd_inspect}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"dcvq: config error: {exc}", file=sys.stderr)
    except (OSError, ValueError) as exc:
        print(f"dcvq: error: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
