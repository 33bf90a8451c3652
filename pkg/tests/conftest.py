# Shared fixtures for the VA-MoE test suite
import os
import sys

import numpy as np
import pytest

# Add repo root to path
sys.path.insert(0, os.path.dirname(os.path.dirname(os.path.abspath(__file__))))

from src.data import SplitSizes, make_bundle
from src.harness.run_config import RunConfig
from src.model import ModelConfig, default_catalog, surface_groups

TINY_GRID = (8, 16)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def initial_catalog():
    """Five upper-air groups with one level each (N = 5)"""
    return default_catalog(1)


@pytest.fixture
def full_catalog(initial_catalog):
    """Initial catalog plus the single SV group (M = 5)"""
    return initial_catalog.extend(surface_groups("single"))


@pytest.fixture
def tiny_config():
    return ModelConfig(grid=TINY_GRID, width=8, heads=2, depth=1, patch_size=4)


@pytest.fixture
def tiny_config64():
    return ModelConfig(grid=TINY_GRID, width=8, heads=2, depth=1, patch_size=4, dtype="float64")


@pytest.fixture
def tiny_sizes():
    return SplitSizes(initial_pairs=12, incremental_pairs=6, test_pairs=6, test_gap=2)


@pytest.fixture
def tiny_bundle(full_catalog, tiny_sizes):
    return make_bundle(full_catalog, tiny_sizes, seed=3, grid=TINY_GRID, spin_up=5)


@pytest.fixture(scope="session")
def tiny_run_settings():
    """Run-config values for a protocol run that finishes in seconds"""
    return dict(grid_height=TINY_GRID[0], grid_width=TINY_GRID[1], upper_air_levels=1, width=8, heads=2, depth=1,
                patch_size=4, moe_experts=4, initial_pairs=12, incremental_pairs=6, test_pairs=6, test_gap=2,
                spin_up_steps=5, initial_epochs=2, incremental_epochs=2, full_retrain_epochs=2, batch_size=4,
                eval_every=1, lead_times=[1, 3], overfit_steps=20, forgetting_seeds=1, lr_initial=0.002,
                lr_incremental=0.002)


@pytest.fixture
def tiny_run_config(tmp_path, tiny_run_settings):
    return RunConfig(output_dir=str(tmp_path / "runs"), **tiny_run_settings)
