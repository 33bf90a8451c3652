"""
Datasets and splits
Immutable frame sequences tagged with phase and split, and the time-disjoint
initial / incremental / test splits of one synthetic trajectory
"""

from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from config.settings import INCREMENTAL_PAIRS, INITIAL_PAIRS, TEST_GAP, TEST_PAIRS
from src.errors import CatalogMismatchError, ConfigError, IndexOutOfRangeError, ShapeError
from src.data.synthetic import default_spec, generate
from src.model.catalog import VariableCatalog


class DatasetPhase(Enum):
    INITIAL = 0
    INCREMENTAL = 1


class DatasetSplit(Enum):
    TRAIN = 0
    TEST = 1


@dataclass(frozen=True)
class Dataset:
    """
    Consecutive frames [T, H, W, C]; pair i is (frames[i], frames[i + 1])

    Initial-phase datasets hold only the N initial channels, incremental-phase
    datasets hold N + M.
    """
    frames: np.ndarray
    catalog: VariableCatalog
    phase: DatasetPhase = DatasetPhase.INITIAL
    split: DatasetSplit = DatasetSplit.TRAIN

    def __post_init__(self):
        frames = np.array(self.frames, dtype=np.float32, copy=True)
        if frames.ndim != 4:
            raise ShapeError(f"dataset frames must be [T,H,W,C], got {frames.shape}")
        if frames.shape[0] < 2:
            raise ShapeError("a dataset needs at least two frames")
        if frames.shape[-1] != self.catalog.channel_count:
            raise CatalogMismatchError(f"frames have {frames.shape[-1]} channels, "
                                       f"catalog has {self.catalog.channel_count}")
        if (self.phase == DatasetPhase.INCREMENTAL) != self.catalog.is_expanded:
            raise CatalogMismatchError(f"{self.phase.name.lower()} dataset with catalog {self.catalog}")
        frames.setflags(write=False)
        object.__setattr__(self, "frames", frames)

    @property
    def frame_count(self) -> int:
        return self.frames.shape[0]

    @property
    def pair_count(self) -> int:
        return self.frames.shape[0] - 1

    @property
    def grid(self) -> Tuple[int, int]:
        return self.frames.shape[1], self.frames.shape[2]

    @property
    def channel_count(self) -> int:
        return self.frames.shape[-1]

    def pairs(self, indices: Sequence[int]) -> Tuple[np.ndarray, np.ndarray]:
        """Batch of inputs X^t and targets X^{t+1} for the given pair indices"""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.size and (indices.min() < 0 or indices.max() >= self.pair_count):
            raise IndexOutOfRangeError(f"pair index outside [0, {self.pair_count})")
        return self.frames[indices], self.frames[indices + 1]

    def check_compatible(self, catalog: VariableCatalog):
        """Raise CatalogMismatchError unless the data carries exactly the catalog's channels"""
        if self.catalog.channel_names != catalog.channel_names:
            raise CatalogMismatchError(f"dataset channels ({self.catalog.channel_count}) do not match "
                                       f"model catalog ({catalog.channel_count}): {catalog}")

    def restrict_initial(self) -> "Dataset":
        """Same frames limited to the initial-phase channels"""
        initial = self.catalog.initial_only()
        return Dataset(self.frames[..., :initial.channel_count], initial, DatasetPhase.INITIAL, self.split)

    def with_frames(self, frames: np.ndarray) -> "Dataset":
        return Dataset(frames, self.catalog, self.phase, self.split)

    def __repr__(self) -> str:
        return (f"Dataset({self.phase.name.lower()}/{self.split.name.lower()}, frames={self.frame_count}, "
                f"grid={self.grid}, channels={self.channel_count})")


@dataclass(frozen=True)
class SplitSizes:
    initial_pairs: int = INITIAL_PAIRS
    incremental_pairs: int = INCREMENTAL_PAIRS
    test_pairs: int = TEST_PAIRS
    test_gap: int = TEST_GAP

    def __post_init__(self):
        if min(self.initial_pairs, self.incremental_pairs, self.test_pairs) < 1 or self.test_gap < 0:
            raise ConfigError(f"invalid split sizes {self}")
        if self.incremental_pairs > self.initial_pairs:
            raise ConfigError("incremental window cannot be longer than the initial window")

    @property
    def total_frames(self) -> int:
        return self.initial_pairs + self.test_gap + self.test_pairs + 1


@dataclass(frozen=True)
class DatasetBundle:
    """All splits of one trajectory"""
    initial_train: Dataset
    incremental_train: Dataset
    full_train: Dataset
    test: Dataset

    @property
    def initial_test(self) -> Dataset:
        return self.test.restrict_initial()


def split_trajectory(frames: np.ndarray, catalog: VariableCatalog, sizes: SplitSizes) -> DatasetBundle:
    """
    Cut one trajectory of the expanded catalog into time-ordered splits

    initial window   frames [0, P]                 initial channels only
    incremental      last P_inc pairs of the window all channels
    full             frames [0, P]                 all channels (full-retrain comparator)
    test             after a gap of test_gap       all channels
    """
    if not catalog.is_expanded:
        raise CatalogMismatchError("splits are cut from a trajectory of the expanded catalog")
    if frames.shape[0] < sizes.total_frames:
        raise ShapeError(f"trajectory has {frames.shape[0]} frames, splits need {sizes.total_frames}")
    window = frames[:sizes.initial_pairs + 1]
    n = catalog.n_initial
    initial = Dataset(window[..., :n], catalog.initial_only(), DatasetPhase.INITIAL, DatasetSplit.TRAIN)
    incremental = Dataset(window[-(sizes.incremental_pairs + 1):], catalog, DatasetPhase.INCREMENTAL,
                          DatasetSplit.TRAIN)
    full = Dataset(window, catalog, DatasetPhase.INCREMENTAL, DatasetSplit.TRAIN)
    start = sizes.initial_pairs + sizes.test_gap
    test = Dataset(frames[start:start + sizes.test_pairs + 1], catalog, DatasetPhase.INCREMENTAL,
                   DatasetSplit.TEST)
    logger.info(f"Splits: initial {initial.pair_count} pairs, incremental {incremental.pair_count}, "
                f"test {test.pair_count} (from frame {start})")
    return DatasetBundle(initial, incremental, full, test)


def generate_dataset(spec, frames: int, split: DatasetSplit = DatasetSplit.TRAIN) -> Dataset:
    """Synthetic trajectory wrapped as a Dataset; the phase follows the generator's catalog"""
    phase = DatasetPhase.INCREMENTAL if spec.catalog.is_expanded else DatasetPhase.INITIAL
    return Dataset(generate(spec, frames), spec.catalog, phase, split)


def make_bundle(catalog: VariableCatalog, sizes: Optional[SplitSizes] = None, seed: int = 0,
                grid: Optional[Tuple[int, int]] = None, spin_up: Optional[int] = None) -> DatasetBundle:
    """Generate a trajectory for the expanded catalog and split it"""
    sizes = sizes or SplitSizes()
    kwargs = {"seed": seed}
    if grid is not None:
        kwargs["grid"] = grid
    if spin_up is not None:
        kwargs["spin_up"] = spin_up
    spec = default_spec(catalog, **kwargs)
    return split_trajectory(generate(spec, sizes.total_frames), catalog, sizes)
