"""
Command-line interface
One verb per protocol step. Every run writes into its own timestamped directory
under --out; domain errors end the process with a one-line reason and an exit code.
"""

import argparse
import sys
from datetime import datetime
from pathlib import Path
from typing import List, Optional

from loguru import logger

from config.settings import LOG_LEVEL
from src.errors import VaMoeError
from src.harness import commands
from src.harness.run_config import RunConfig, load_run_config

VERBS = ["train-initial", "train-incremental", "evaluate", "forgetting-report", "gradcheck", "ablation"]


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vamoe", description="VA-MoE incremental forecasting at desk scale")
    sub = parser.add_subparsers(dest="verb", required=True)
    verbs = {
        "train-initial": "train on the initial variables",
        "train-incremental": "expand an initial checkpoint with the surface variables and train the new modules",
        "evaluate": "score a checkpoint on a dataset file",
        "forgetting-report": "frozen incremental vs naive fine-tune vs full retrain",
        "gradcheck": "finite-difference gradient suite",
        "ablation": "compare vamoe, vit and vit_moe on the initial phase",
    }
    parsers = {}
    for verb in VERBS:
        verb_parser = sub.add_parser(verb, help=verbs[verb])
        verb_parser.add_argument("--config", help="run config file (key = value)")
        verb_parser.add_argument("--seed", type=int, help="overrides the config seed")
        verb_parser.add_argument("--out", help="parent directory of the run directory")
        verb_parser.add_argument("--log-level", default=LOG_LEVEL,
                                 choices=["TRACE", "DEBUG", "INFO", "SUCCESS", "WARNING", "ERROR"])
        parsers[verb] = verb_parser
    parsers["train-incremental"].add_argument("--base", required=True, help="initial-phase checkpoint")
    parsers["evaluate"].add_argument("--checkpoint", required=True)
    parsers["evaluate"].add_argument("--dataset", required=True, help="dataset file (.vamg)")
    parsers["forgetting-report"].add_argument("--base", action="append",
                                              help="initial checkpoint per seed; repeat for more seeds")
    return parser


def make_run_dir(parent, verb: str) -> Path:
    """`<parent>/<verb>_<timestamp>`, suffixed when the name is taken"""
    stamp = datetime.now().strftime("%Y%m%d_%H%M%S")
    run_dir = Path(parent) / f"{verb.replace('-', '_')}_{stamp}"
    suffix = 1
    while run_dir.exists():
        run_dir = Path(parent) / f"{verb.replace('-', '_')}_{stamp}_{suffix}"
        suffix += 1
    run_dir.mkdir(parents=True)
    return run_dir


def configure_logging(level: str, run_dir: Optional[Path] = None) -> List[int]:
    """One stderr sink plus run.log in the run directory"""
    logger.remove()
    sinks = [logger.add(sys.stderr, level=level, format="{time:HH:mm:ss} | {level: <8} | {message}")]
    if run_dir is not None:
        sinks.append(logger.add(run_dir / "run.log", level="DEBUG", encoding="utf-8",
                                format="{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{line} | {message}"))
    return sinks


def dispatch(args: argparse.Namespace, config: RunConfig, run_dir: Path):
    if args.verb == "train-initial":
        outcome = commands.cmd_train_initial(config, run_dir)
        logger.info(f"Initial checkpoint: {outcome.checkpoint_path}")
    elif args.verb == "train-incremental":
        outcome = commands.cmd_train_incremental(config, args.base, run_dir)
        logger.info(f"Incremental checkpoint: {outcome.checkpoint_path} "
                    f"(trainable ratio {outcome.trainable_ratio:.3f})")
    elif args.verb == "evaluate":
        commands.cmd_evaluate(config, args.checkpoint, args.dataset, run_dir)
    elif args.verb == "forgetting-report":
        commands.cmd_forgetting_report(config, run_dir, args.base)
    elif args.verb == "gradcheck":
        commands.cmd_gradcheck(config, run_dir)
    elif args.verb == "ablation":
        commands.cmd_ablation(config, run_dir)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    try:
        config = load_run_config(args.config, args.seed)
        run_dir = make_run_dir(args.out or config.output_dir, args.verb)
        configure_logging(args.log_level, run_dir)
        config.write_echo(run_dir)
        logger.info(f"{args.verb}: run directory {run_dir}")
        dispatch(args, config, run_dir)
    except VaMoeError as exc:
        detail = " ".join(str(exc).split())
        print(f"FAILED reason={exc.reason} detail={detail}", file=sys.stderr)
        return exc.exit_code
    finally:
        # release run.log
        configure_logging(args.log_level)
    return 0
