"""Command-line entry point: ``hytl --config <scenario> --stage <name>``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import HytlError
from .pipeline import STAGES, load_config, run_pipeline

LEVELS = {"debug": logging.DEBUG, "info": logging.INFO, "warning": logging.WARNING,
          "error": logging.ERROR}


def build_parser():
    p = argparse.ArgumentParser(
        prog="hytl",
        description="Simulate a hybrid system, build its timed abstraction and observer, "
                    "and infer a classifying MTL formula.")
    p.add_argument("--config", required=True,
                   help="scenario JSON path or bundled name (smart_building, fig2_toy)")
    p.add_argument("--stage", default="pipeline", choices=STAGES + ("pipeline",))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="hytl-out", help="output directory")
    p.add_argument("--grid-step", type=float, default=None, help="simulation grid step [s]")
    p.add_argument("--max-states", type=int, default=None, help="observer state budget")
    return p


def _setup_logging():
    level = LEVELS.get(os.environ.get("HYTL_LOG", "warning").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv=None):
    args = build_parser().parse_args(argv)
    _setup_logging()
    if args.seed < 0 or args.seed >= 2**64:
        print("hytl: --seed must be an unsigned 64-bit integer", file=sys.stderr)
        return 2
    if args.grid_step is not None and args.grid_step <= 0:
        print("hytl: --grid-step must be positive", file=sys.stderr)
        return 2
    try:
        cfg = load_config(args.config)
        stages = None if args.stage == "pipeline" else (args.stage,)
        manifest = run_pipeline(cfg, args.out, seed=args.seed, grid_step=args.grid_step,
                                max_states=args.max_states, stages=stages)
    except HytlError as exc:
        print(f"hytl: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code
    print(json.dumps({"out": str(args.out), "stages": [s["stage"] for s in manifest["stages"]]}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
