#!/usr/bin/env python3
"""
Dataset Generation Script for VA-MoE
Writes one synthetic trajectory, cut into the initial, incremental, full and test
splits, as dataset files plus the normalization statistics of each phase
"""

import argparse
import os
import sys
from pathlib import Path

from loguru import logger

# Add repo root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.data import NormalizationStats, make_bundle, phase_stats, save_bundle
from src.errors import VaMoeError
from src.harness.run_config import load_run_config


def main(argv=None):
    """Generate the dataset bundle for a run config"""
    parser = argparse.ArgumentParser(description="Write a synthetic VA-MoE dataset bundle")
    parser.add_argument("--config", help="run config file (key = value)")
    parser.add_argument("--seed", type=int, help="overrides the config seed")
    parser.add_argument("--out", required=True, help="bundle directory; point data_dir at it")
    args = parser.parse_args(argv)

    try:
        config = load_run_config(args.config, args.seed)
        out = Path(args.out)
        logger.info(f"Generating trajectory: grid {config.grid_height}x{config.grid_width}, "
                    f"{config.split_sizes().total_frames} frames, seed {config.seed}")
        bundle = make_bundle(config.full_catalog(), config.split_sizes(), seed=config.seed,
                             grid=(config.grid_height, config.grid_width), spin_up=config.spin_up_steps)
        save_bundle(bundle, out)
        NormalizationStats.from_dataset(bundle.initial_train).save(out / "normalization_initial.txt")
        phase_stats(bundle.initial_train, bundle.incremental_train).save(out / "normalization_incremental.txt")
        config.write_echo(out)
        logger.info(f"Dataset bundle written to {out}")
        return 0
    except VaMoeError as exc:
        print(f"FAILED reason={exc.reason} detail={' '.join(str(exc).split())}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
