"""Command-line entry point: ``talkinghead <subcommand> [flags]``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from ..errors import ConfigurationError, PreconditionError, TrainingDiverged
from . import stages
from .config import load_config

COMMANDS = {
    "prepare": lambda cfg, a: stages.prepare(cfg, force=a.force),
    "train-general": lambda cfg, a: stages.train_general_stage(cfg),
    "finetune": lambda cfg, a: stages.finetune_stage(cfg),
    "generate": lambda cfg, a: stages.generate_stage(cfg),
    "evaluate": lambda cfg, a: stages.evaluate_stage(cfg),
    "sweep-finetune-length": lambda cfg, a: stages.sweep_finetune_length(cfg),
    "run-all": lambda cfg, a: stages.run_all(cfg),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="talkinghead", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="key = value configuration file")
    common.add_argument("--seed", type=int, help="override the configured seed")
    common.add_argument("--frames", type=int, help="fine-tuning frames taken from the target video")
    common.add_argument("--no-finetune", action="store_true", help="use the general mapping as is")
    common.add_argument("--no-refiner", action="store_true", help="output raw composites")
    common.add_argument("--run-name", help="output subdirectory under <data_root>/runs")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, parents=[common])
        if name == "prepare":
            p.add_argument("--force", action="store_true", help="regenerate even if the corpus matches")
    return parser


def config_from_args(args: argparse.Namespace):
    overrides = {"seed": args.seed, "finetune_frames": args.frames, "run_name": args.run_name}
    if args.no_finetune:
        overrides["use_finetune"] = False
    if args.no_refiner:
        overrides["use_refiner"] = False
    return load_config(args.config, **overrides)


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = config_from_args(args)
        result = COMMANDS[args.command](cfg, args)
    except (ConfigurationError, PreconditionError, TrainingDiverged) as exc:
        print(f"talkinghead {args.command}: {exc}", file=sys.stderr)
        return 2
    print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
