"""
Command line: python -m ChannelGating <command> [options]
"""

import argparse
import logging
import sys
from typing import List, Optional

from . import __DESCRIPTION__, __version__
from .constants import BENCH_EXAMPLES, COMMANDS, TOP_K
from .ExperimentManager import ExperimentManager, parse_thresholds

logger = logging.getLogger("ChannelGating")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ChannelGating", description=__DESCRIPTION__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("command", choices=COMMANDS, help="what to run")
    parser.add_argument("--config", metavar="PATH", help="experiment config (YAML)")
    parser.add_argument("--seed", type=int, help="override the config seed")
    parser.add_argument("--checkpoint", metavar="PATH", help="model checkpoint to resume from or evaluate")
    parser.add_argument("--out", metavar="DIR", help="output directory")
    parser.add_argument("--gamma", type=float, help="final L0 coefficient")
    parser.add_argument("--gamma-point", type=int, metavar="INDEX", help="final L0 coefficient from the preset's sweep grid")
    parser.add_argument("--lambda", dest="lam", type=float, help="starting batch-shaping coefficient")
    parser.add_argument("--thresholds", metavar="ON,OFF", default=None, help="always-on / always-off firing rates (analyze)")
    parser.add_argument("--trace", metavar="PATH", help="gate trace file (analyze, export)")
    parser.add_argument("--summary", metavar="PATH", action="append", default=[], help="eval summary, repeatable (export)")
    parser.add_argument("--examples", type=int, default=BENCH_EXAMPLES, help="test images to time (bench)")
    parser.add_argument("--repetitions", type=int, default=5, help="timed passes over the images (bench)")
    parser.add_argument("--force", type=float, metavar="FRACTION", help="force this fraction of gates open (bench)")
    parser.add_argument("--sweep", action="store_true", help="also time forced activity levels (bench)")
    parser.add_argument("--top-k", type=int, default=TOP_K, help="examples in the MAC ranking (analyze)")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        options = {
            "trace": args.trace,
            "summaries": args.summary,
            "examples": args.examples,
            "repetitions": args.repetitions,
            "force": args.force,
            "sweep": args.sweep,
            "top_k": args.top_k,
        }
        if args.thresholds is not None:
            options["thresholds"] = parse_thresholds(args.thresholds)
        manager = ExperimentManager(
            config_path=args.config,
            seed=args.seed,
            gamma=args.gamma,
            lam=args.lam,
            out=args.out,
            checkpoint=args.checkpoint,
            gamma_index=args.gamma_point,
        )
        return manager.run(args.command, **options)
    except ValueError as e:
        logger.error(f"main: {e}", exc_info=args.verbose)
        return 1
    except ArithmeticError as e:
        logger.error(f"main: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
