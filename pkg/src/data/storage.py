"""
Dataset files
Binary VAMG format: magic, u16 version, u32 H W C T, u8 phase, u8 split, the
catalog manifest, then little-endian float32 frames (frame-major, row-major)
"""

import struct
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from config.settings import DATASET_MAGIC, DATASET_VERSION
from src.data.dataset import Dataset, DatasetBundle, DatasetPhase, DatasetSplit
from src.errors import (BadMagicError, CatalogMismatchError, FileFormatError, ManifestMismatchError, TruncatedFileError,
                        VersionMismatchError)
from src.model.catalog import VariableCatalog, VariableGroup, VariableKind

KIND_CODES = {VariableKind.UPPER_AIR: 0, VariableKind.SURFACE: 1}
CODE_KINDS = {code: kind for kind, code in KIND_CODES.items()}

# One file per split inside a bundle directory
BUNDLE_FILES = {
    "initial_train": "initial_train.vamg",
    "incremental_train": "incremental_train.vamg",
    "full_train": "full_train.vamg",
    "test": "test.vamg",
}


def _pack_name(name: str) -> bytes:
    raw = name.encode("utf-8")
    return struct.pack("<H", len(raw)) + raw


def encode_header(dataset: Dataset) -> bytes:
    frames, height, width, channels = dataset.frames.shape
    catalog = dataset.catalog
    parts = [DATASET_MAGIC, struct.pack("<H", DATASET_VERSION),
             struct.pack("<IIII", height, width, channels, frames),
             struct.pack("<BB", dataset.phase.value, dataset.split.value),
             struct.pack("<HH", len(catalog.groups), catalog.initial_count)]
    for group in catalog.groups:
        parts.append(_pack_name(group.name))
        parts.append(struct.pack("<BH", KIND_CODES[group.kind], group.levels))
        parts.extend(_pack_name(channel) for channel in group.channels)
    return b"".join(parts)


def header_size(dataset: Dataset) -> int:
    return len(encode_header(dataset))


def save_dataset(dataset: Dataset, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.ascontiguousarray(dataset.frames, dtype="<f4")
    path.write_bytes(encode_header(dataset) + data.tobytes())
    logger.info(f"Dataset written: {path} ({dataset})")
    return path


class _Cursor:
    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.source = source
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.payload):
            raise TruncatedFileError(f"{self.source}: truncated header at byte {len(self.payload)}")
        chunk = self.payload[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def name(self) -> str:
        length, = self.unpack("<H")
        try:
            return self.take(length).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ManifestMismatchError(f"{self.source}: channel name at byte {self.pos - length} is not valid utf-8") from exc


def decode_dataset(payload: bytes, source: str = "<bytes>") -> Dataset:
    cursor = _Cursor(payload, source)
    magic = cursor.take(len(DATASET_MAGIC))
    if magic != DATASET_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {DATASET_MAGIC!r}")
    version, = cursor.unpack("<H")
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {DATASET_VERSION}")
    height, width, channels, frames = cursor.unpack("<IIII")
    phase_code, split_code = cursor.unpack("<BB")
    group_count, initial_count = cursor.unpack("<HH")
    groups = []
    for _ in range(group_count):
        name = cursor.name()
        kind_code, levels = cursor.unpack("<BH")
        if kind_code not in CODE_KINDS:
            raise FileFormatError(f"{source}: unknown variable kind {kind_code} for group {name}")
        groups.append(VariableGroup(name, CODE_KINDS[kind_code], tuple(cursor.name() for _ in range(levels))))
    try:
        catalog = VariableCatalog(groups, initial_count)
        phase, split = DatasetPhase(phase_code), DatasetSplit(split_code)
    except ValueError as exc:
        raise FileFormatError(f"{source}: {exc}") from None

    expected = 4 * height * width * channels * frames
    body = payload[cursor.pos:]
    if len(body) < expected:
        raise TruncatedFileError(f"{source}: {len(body)} data bytes, header promises {expected}")
    if len(body) > expected:
        raise FileFormatError(f"{source}: {len(body) - expected} trailing bytes after frame data")
    data = np.frombuffer(body, dtype="<f4").reshape(frames, height, width, channels)
    return Dataset(data.astype(np.float32), catalog, phase, split)


def load_dataset(path) -> Dataset:
    path = Path(path)
    if not path.is_file():
        raise FileFormatError(f"dataset file not found: {path}")
    dataset = decode_dataset(path.read_bytes(), str(path))
    logger.debug(f"Dataset loaded: {path} ({dataset})")
    return dataset


# ===== Bundles =====

def save_bundle(bundle: DatasetBundle, directory) -> Dict[str, Path]:
    directory = Path(directory)
    return {split: save_dataset(getattr(bundle, split), directory / name) for split, name in BUNDLE_FILES.items()}


def load_bundle(directory, catalog: Optional[VariableCatalog] = None) -> DatasetBundle:
    """Read all four splits; with `catalog`, the expanded splits must carry exactly its channels"""
    directory = Path(directory)
    missing = [name for name in BUNDLE_FILES.values() if not (directory / name).is_file()]
    if missing:
        raise FileFormatError(f"{directory}: missing dataset files {missing}")
    bundle = DatasetBundle(**{split: load_dataset(directory / name) for split, name in BUNDLE_FILES.items()})
    if bundle.initial_train.catalog != bundle.test.catalog.initial_only():
        raise CatalogMismatchError(f"{directory}: initial split catalog differs from the test split's")
    if catalog is not None:
        for split in ("incremental_train", "full_train", "test"):
            getattr(bundle, split).check_compatible(catalog)
    logger.info(f"Dataset bundle loaded from {directory}")
    return bundle
