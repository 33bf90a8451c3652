"""
Per-channel normalization
Statistics come from training splits only and are stored as a plain-text file
with one `name mean std` line per channel
"""

from dataclasses import dataclass
from pathlib import Path
from typing import Dict, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from src.data.dataset import Dataset
from src.errors import CatalogMismatchError, FileFormatError

STD_FLOOR = 1e-6


@dataclass(frozen=True)
class NormalizationStats:
    """Channel names with their training-split mean and standard deviation"""
    channels: Tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        mean = np.asarray(self.mean, dtype=np.float64).reshape(-1)
        std = np.asarray(self.std, dtype=np.float64).reshape(-1)
        if not (len(self.channels) == mean.size == std.size):
            raise CatalogMismatchError("normalization stats: channel, mean and std counts differ")
        if np.any(std <= 0):
            raise CatalogMismatchError("normalization stats need std > 0 for every channel")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "std", std)

    @classmethod
    def from_dataset(cls, dataset: Dataset, floor: float = STD_FLOOR) -> "NormalizationStats":
        frames = dataset.frames.astype(np.float64)
        mean = frames.mean(axis=(0, 1, 2))
        std = frames.std(axis=(0, 1, 2))
        names = dataset.catalog.channel_names
        for name, value in zip(names, std):
            if value < floor:
                logger.warning(f"Channel {name} has std {value:.3e}; using floor {floor}")
        return cls(tuple(names), mean, np.maximum(std, floor))

    @property
    def channel_count(self) -> int:
        return len(self.channels)

    def merge(self, other: "NormalizationStats") -> "NormalizationStats":
        """Stats of old channels followed by stats of new channels"""
        if set(self.channels) & set(other.channels):
            raise CatalogMismatchError("merged normalization stats overlap")
        return NormalizationStats(self.channels + other.channels, np.concatenate([self.mean, other.mean]),
                                  np.concatenate([self.std, other.std]))

    def subset(self, names: Sequence[str]) -> "NormalizationStats":
        missing = [n for n in names if n not in self.channels]
        if missing:
            raise CatalogMismatchError(f"normalization stats lack channels {missing}")
        index = [self.channels.index(n) for n in names]
        return NormalizationStats(tuple(names), self.mean[index], self.std[index])

    def _check(self, x: np.ndarray):
        if np.shape(x)[-1] != self.channel_count:
            raise CatalogMismatchError(f"field has {np.shape(x)[-1]} channels, stats have {self.channel_count}")

    def normalize(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return ((np.asarray(x, dtype=np.float64) - self.mean) / self.std).astype(np.asarray(x).dtype)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        self._check(x)
        return (np.asarray(x, dtype=np.float64) * self.std + self.mean).astype(np.asarray(x).dtype)

    # ===== Serialisation =====

    def to_text(self) -> str:
        return "".join(f"{name} {float(m)!r} {float(s)!r}\n"
                       for name, m, s in zip(self.channels, self.mean, self.std))

    @classmethod
    def from_text(cls, text: str) -> "NormalizationStats":
        names, means, stds = [], [], []
        for number, line in enumerate(text.splitlines(), 1):
            if not line.strip() or line.lstrip().startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3:
                raise FileFormatError(f"normalization stats line {number}: expected 'name mean std'")
            try:
                means.append(float(parts[1]))
                stds.append(float(parts[2]))
            except ValueError:
                raise FileFormatError(f"normalization stats line {number}: bad number") from None
            names.append(parts[0])
        return cls(tuple(names), np.array(means), np.array(stds))

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_text())
        return path

    @classmethod
    def load(cls, path) -> "NormalizationStats":
        path = Path(path)
        if not path.is_file():
            raise FileFormatError(f"normalization file not found: {path}")
        return cls.from_text(path.read_text())

    def to_dict(self) -> Dict:
        return {"channels": list(self.channels), "mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, payload: Dict) -> "NormalizationStats":
        return cls(tuple(payload["channels"]), np.array(payload["mean"]), np.array(payload["std"]))


def normalize(data: Union[Dataset, np.ndarray], stats: NormalizationStats):
    """(x - mean) / std per channel; datasets come back as datasets"""
    if isinstance(data, Dataset):
        if tuple(data.catalog.channel_names) != stats.channels:
            raise CatalogMismatchError("dataset channels differ from normalization stats")
        return data.with_frames(stats.normalize(data.frames))
    return stats.normalize(data)


def denormalize(x: np.ndarray, stats: NormalizationStats) -> np.ndarray:
    return stats.denormalize(x)


def phase_stats(initial_train: Dataset, incremental_train: Dataset) -> NormalizationStats:
    """Old channels from the initial split, new channels from the incremental split"""
    old = NormalizationStats.from_dataset(initial_train)
    fresh = NormalizationStats.from_dataset(incremental_train)
    catalog = incremental_train.catalog
    new_names = catalog.channel_names[catalog.n_initial:]
    return old.merge(fresh.subset(new_names))
