"""``invariant-atlas`` command-line entry point."""

import argparse
import logging
import sys

import numpy as np
from scipy.sparse.linalg import ArpackError

from ..exceptions import (
    ConfigError,
    EmptyCoveringError,
    ExtensionFailedError,
    IntegrationDivergedError,
    MissingArtifactError,
)
from .config import load_config
from .stages import STAGE_ORDER, run

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_MISSING = 4

NUMERICAL_ERRORS = (
    IntegrationDivergedError,
    ExtensionFailedError,
    EmptyCoveringError,
    ArpackError,
    np.linalg.LinAlgError,
    FloatingPointError,
    ValueError,
)

log = logging.getLogger("invariant_atlas")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="invariant-atlas",
        description="Box coverings of invariant sets and their diffusion-map embeddings.",
    )
    parser.add_argument("stage", nargs="?", choices=STAGE_ORDER + ("all", "config-dump"),
                        help="pipeline stage to run ('all' runs every stage in order)")
    parser.add_argument("--config", help="YAML experiment file")
    parser.add_argument("--seed", type=int, help="override the random seed")
    parser.add_argument("--scale", choices=("desk", "paper"), help="recipe scale")
    parser.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted config key, e.g. dmaps.m=2000 (repeatable)")
    parser.add_argument("--config-dump", action="store_true",
                        help="print the resolved configuration and exit")
    parser.add_argument("-q", "--quiet", action="store_true", help="only log warnings")
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(name)s %(levelname)s: %(message)s")
    dump = args.config_dump or args.stage == "config-dump"
    if args.stage is None and not dump:
        parser.print_usage(sys.stderr)
        print("invariant-atlas: error: a stage or --config-dump is required", file=sys.stderr)
        return EXIT_CONFIG
    if args.config is None and not dump:
        print("invariant-atlas: error: --config is required to run a stage", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = load_config(args.config, scale=args.scale, seed=args.seed, overrides=args.override)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if dump:
        sys.stdout.write(cfg.dump())
        return EXIT_OK
    stage = args.stage
    try:
        ran = run(cfg, stage)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except MissingArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure in stage '{stage}': {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    log.info("done (%s)", ", ".join(ran) if ran else "nothing to do")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
