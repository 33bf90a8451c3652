"""
Checkpoint files
Binary VAMO format: header, JSON metadata, parameter manifest and raw
little-endian parameter data. Round trips are bit-exact.
"""

import json
import struct
from collections import OrderedDict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple

import numpy as np
from loguru import logger

from config.settings import CHECKPOINT_MAGIC, CHECKPOINT_VERSION
from src.errors import (BadMagicError, CatalogMismatchError, FileFormatError, ManifestMismatchError, TruncatedFileError,
                        VersionMismatchError)
from src.losses.objectives import DynamicLossWeights
from src.model.catalog import VariableCatalog
from src.model.network import ModelConfig, VaMoeForecaster
from src.tensor_core import Parameter

DTYPE_CODES = {np.dtype(np.float32): 1, np.dtype(np.float64): 2}
CODE_DTYPES = {code: dtype for dtype, code in DTYPE_CODES.items()}
REQUIRED_META = ("model_config", "catalog", "phase")


@dataclass
class ParameterRecord:
    """One manifest entry with its values"""
    name: str
    array: np.ndarray
    frozen: bool


@dataclass
class Checkpoint:
    """In-memory checkpoint: metadata plus parameter records in manifest order"""
    meta: Dict
    records: "OrderedDict[str, ParameterRecord]" = field(default_factory=OrderedDict)

    @property
    def phase(self) -> str:
        return self.meta.get("phase", "initial")

    @property
    def catalog(self) -> VariableCatalog:
        try:
            return VariableCatalog.from_dict(self.meta["catalog"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestMismatchError(f"checkpoint catalog metadata is malformed: {exc!r}") from exc

    @property
    def model_config(self) -> ModelConfig:
        try:
            return ModelConfig.from_dict(self.meta["model_config"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestMismatchError(f"checkpoint model metadata is malformed: {exc!r}") from exc

    @property
    def normalization(self) -> Optional[Dict]:
        return self.meta.get("normalization")

    def array(self, name: str) -> np.ndarray:
        if name not in self.records:
            raise ManifestMismatchError(f"parameter {name!r} not in checkpoint")
        return self.records[name].array


def parameter_table(model: VaMoeForecaster,
                    loss_weights: Optional[DynamicLossWeights] = None) -> "OrderedDict[str, Parameter]":
    """Every parameter of the model (and the loss weights) under its hierarchical name"""
    table = OrderedDict(model.named_parameters())
    if loss_weights is not None:
        table.update(loss_weights.named_parameters("loss"))
    return table


def snapshot(model: VaMoeForecaster, loss_weights: Optional[DynamicLossWeights] = None,
             phase: str = "initial", normalization: Optional[Dict] = None) -> Checkpoint:
    """Copy of the current parameter values"""
    meta = {
        "model_config": model.config.to_dict(),
        "catalog": model.catalog.to_dict(),
        "phase": phase,
        "recon_lambda": loss_weights.recon_lambda if loss_weights is not None else None,
        "normalization": normalization,
    }
    records = OrderedDict(
        (name, ParameterRecord(name, np.array(param.data, copy=True), param.frozen))
        for name, param in parameter_table(model, loss_weights).items()
    )
    return Checkpoint(meta, records)


# ===== Encoding =====

def encode_checkpoint(checkpoint: Checkpoint) -> bytes:
    meta = json.dumps(checkpoint.meta, sort_keys=True).encode("utf-8")
    manifest = [struct.pack("<I", len(checkpoint.records))]
    blobs = []
    offset = 0
    for record in checkpoint.records.values():
        array = np.ascontiguousarray(record.array, dtype=record.array.dtype.newbyteorder("<"))
        blob = array.tobytes()
        name = record.name.encode("utf-8")
        manifest.append(struct.pack("<H", len(name)) + name)
        manifest.append(struct.pack("<B", array.ndim) + struct.pack(f"<{array.ndim}I", *array.shape))
        manifest.append(struct.pack("<BBQQ", DTYPE_CODES[np.dtype(record.array.dtype)],
                                    int(record.frozen), offset, len(blob)))
        blobs.append(blob)
        offset += len(blob)
    header = CHECKPOINT_MAGIC + struct.pack("<H", CHECKPOINT_VERSION) + struct.pack("<I", len(meta)) + meta
    return header + b"".join(manifest) + b"".join(blobs)


class _Reader:
    """Bounds-checked cursor over a byte buffer"""

    def __init__(self, payload: bytes, source: str):
        self.payload = payload
        self.source = source
        self.pos = 0

    def take(self, count: int) -> bytes:
        if self.pos + count > len(self.payload):
            raise TruncatedFileError(f"{self.source}: file ends at byte {len(self.payload)}, "
                                     f"needed {self.pos + count}")
        chunk = self.payload[self.pos:self.pos + count]
        self.pos += count
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def text(self, count: int, what: str) -> str:
        try:
            return self.take(count).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ManifestMismatchError(f"{self.source}: {what} is not valid utf-8") from exc


def _decode_meta(text: str, source: str) -> Dict:
    try:
        meta = json.loads(text)
    except ValueError as exc:
        raise ManifestMismatchError(f"{source}: metadata is not valid JSON ({exc})") from exc
    if not isinstance(meta, dict):
        raise ManifestMismatchError(f"{source}: metadata must be a JSON object")
    missing = [key for key in REQUIRED_META if key not in meta]
    if missing:
        raise ManifestMismatchError(f"{source}: metadata lacks {missing}")
    return meta


def decode_checkpoint(payload: bytes, source: str = "<bytes>") -> Checkpoint:
    reader = _Reader(payload, source)
    magic = reader.take(len(CHECKPOINT_MAGIC))
    if magic != CHECKPOINT_MAGIC:
        raise BadMagicError(f"{source}: bad magic {magic!r}, expected {CHECKPOINT_MAGIC!r}")
    version, = reader.unpack("<H")
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(f"{source}: format version {version}, expected {CHECKPOINT_VERSION}")
    meta_len, = reader.unpack("<I")
    meta = _decode_meta(reader.text(meta_len, "metadata"), source)
    count, = reader.unpack("<I")

    entries = []
    for _ in range(count):
        name_len, = reader.unpack("<H")
        name = reader.text(name_len, "parameter name")
        ndim, = reader.unpack("<B")
        shape = reader.unpack(f"<{ndim}I") if ndim else ()
        code, frozen, offset, nbytes = reader.unpack("<BBQQ")
        if code not in CODE_DTYPES:
            raise ManifestMismatchError(f"{source}: unknown dtype code {code} for {name}")
        entries.append((name, shape, CODE_DTYPES[code], bool(frozen), offset, nbytes))

    data_start = reader.pos
    records = OrderedDict()
    for name, shape, dtype, frozen, offset, nbytes in entries:
        expected = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        if nbytes != expected:
            raise ManifestMismatchError(f"{source}: {name} declares {nbytes} bytes, shape needs {expected}")
        end = data_start + offset + nbytes
        if end > len(payload):
            raise TruncatedFileError(f"{source}: data of {name} runs past end of file")
        array = np.frombuffer(payload, dtype=dtype.newbyteorder("<"), count=expected // dtype.itemsize,
                              offset=data_start + offset).astype(dtype).reshape(shape)
        records[name] = ParameterRecord(name, array, frozen)
    return Checkpoint(meta, records)


def save_checkpoint(path, checkpoint: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode_checkpoint(checkpoint))
    logger.info(f"Checkpoint written: {path} ({len(checkpoint.records)} parameters, phase {checkpoint.phase})")
    return path


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    if not path.is_file():
        raise FileFormatError(f"checkpoint file not found: {path}")
    checkpoint = decode_checkpoint(path.read_bytes(), str(path))
    logger.debug(f"Checkpoint loaded: {path} ({len(checkpoint.records)} parameters)")
    return checkpoint


# ===== Model restore =====

def load_parameters(model: VaMoeForecaster, checkpoint: Checkpoint,
                    loss_weights: Optional[DynamicLossWeights] = None):
    """Copy checkpoint values and frozen flags into an already-built model"""
    table = parameter_table(model, loss_weights)
    missing = set(table) ^ set(checkpoint.records)
    if missing:
        raise ManifestMismatchError(f"checkpoint and model disagree on parameters: {sorted(missing)[:5]}")
    for name, param in table.items():
        record = checkpoint.records[name]
        if record.array.shape != param.shape:
            raise ManifestMismatchError(f"{name}: checkpoint shape {record.array.shape}, model {param.shape}")
        param.assign(record.array)
        param.frozen = record.frozen


def restore_model(checkpoint: Checkpoint) -> Tuple[VaMoeForecaster, DynamicLossWeights]:
    """Rebuild model and loss weights from a checkpoint alone"""
    catalog = checkpoint.catalog
    model = VaMoeForecaster(catalog, checkpoint.model_config)
    if model.channel_count != catalog.channel_count:
        raise CatalogMismatchError("checkpoint catalog does not match its encoder layout")
    recon_lambda = checkpoint.meta.get("recon_lambda")
    loss_weights = DynamicLossWeights(catalog.channel_count, dtype=model.dtype,
                                      **({"recon_lambda": recon_lambda} if recon_lambda is not None else {}))
    load_parameters(model, checkpoint, loss_weights)
    return model, loss_weights
