import struct
from dataclasses import replace

import numpy as np
import pytest

from src.errors import (BadMagicError, CatalogMismatchError, ConfigError, ManifestMismatchError, ShapeError,
                        TruncatedFileError, VersionMismatchError)
from src.losses import DynamicLossWeights
from src.model import (ModelConfig, VaMoeForecaster, load_checkpoint, load_parameters, restore_model,
                       save_checkpoint, snapshot)
from src.model.checkpoint import decode_checkpoint, encode_checkpoint


def _field(rng, channels, batch=2, grid=(8, 16)):
    return rng.standard_normal((batch,) + grid + (channels,)).astype(np.float32)


# ===== Forecaster =====

def test_forward_shapes(full_catalog, tiny_config, rng):
    model = VaMoeForecaster(full_catalog, tiny_config, seed=0)
    assert model.forward(_field(rng, 10)).shape == (2, 8, 16, 10)
    assert model.forward(_field(rng, 10)[0]).shape == (8, 16, 10)
    assert model.reconstruct(_field(rng, 10)).shape == (2, 8, 16, 10)
    assert model.forecast(_field(rng, 10)).dtype == np.float32


def test_forward_rejects_wrong_channels_or_grid(full_catalog, tiny_config, rng):
    model = VaMoeForecaster(full_catalog, tiny_config, seed=0)
    with pytest.raises(CatalogMismatchError):
        model.forward(_field(rng, 5))
    with pytest.raises(ShapeError):
        model.forward(_field(rng, 10, grid=(8, 8)))


def test_routing_trace_has_one_entry_per_block_and_group(full_catalog, tiny_config, rng):
    model = VaMoeForecaster(full_catalog, replace(tiny_config, depth=2), seed=0)
    decisions = []
    model.forward(_field(rng, 10, batch=1), decisions)
    assert len(decisions) == 2
    assert list(decisions[0]) == full_catalog.group_names
    tokens = tiny_config.tokens
    assert decisions[1]["SV"].indices.shape == (1, tokens, tiny_config.k)


def test_same_seed_builds_identical_models(initial_catalog, tiny_config):
    first = VaMoeForecaster(initial_catalog, tiny_config, seed=4)
    second = VaMoeForecaster(initial_catalog, tiny_config, seed=4)
    for (name_a, a), (name_b, b) in zip(first.named_parameters(), second.named_parameters()):
        assert name_a == name_b
        assert np.array_equal(a.data, b.data)


@pytest.mark.parametrize("architecture", ["vit", "vit_moe"])
def test_ablation_architectures_build_without_index_embedding(initial_catalog, tiny_config, rng, architecture):
    model = VaMoeForecaster(initial_catalog, replace(tiny_config, architecture=architecture), seed=0)
    assert model.index_embedding is None
    assert model.forward(_field(rng, 5)).shape == (2, 8, 16, 5)
    assert not any(".caes." in name for name, _ in model.named_parameters())


def test_model_config_validation():
    with pytest.raises(ConfigError):
        ModelConfig(grid=(8, 15), patch_size=4)
    with pytest.raises(ConfigError):
        ModelConfig(width=10, heads=4)
    with pytest.raises(ConfigError):
        ModelConfig(architecture="cnn")
    with pytest.raises(ConfigError):
        ModelConfig(width=8, heads=2, top_k=9)
    assert ModelConfig(width=16, heads=2, top_k=0).k == 4


def test_model_config_dict_round_trip(tiny_config):
    assert ModelConfig.from_dict(tiny_config.to_dict()) == tiny_config


# ===== Checkpoints =====

def _trained_like(catalog, config, rng):
    model = VaMoeForecaster(catalog, config, seed=1)
    for param in model.parameters():
        param.assign(param.data + rng.normal(0.0, 0.05, param.shape).astype(param.dtype))
    weights = DynamicLossWeights(catalog.channel_count, recon_lambda=0.5)
    weights.w.assign(rng.normal(0.0, 0.1, weights.w.shape).astype(np.float32))
    return model, weights


def test_checkpoint_encoding_is_bit_exact(full_catalog, tiny_config, rng):
    model, weights = _trained_like(full_catalog, tiny_config, rng)
    model.encoder.kernel[0].frozen = True
    checkpoint = snapshot(model, weights, phase="incremental", normalization={"channels": ["z50"]})
    decoded = decode_checkpoint(encode_checkpoint(checkpoint))
    assert decoded.meta == checkpoint.meta
    assert list(decoded.records) == list(checkpoint.records)
    for name, record in checkpoint.records.items():
        assert decoded.records[name].array.dtype == record.array.dtype
        assert decoded.records[name].array.tobytes() == record.array.tobytes()
        assert decoded.records[name].frozen == record.frozen
    assert decoded.records["encoder.kernel.0"].frozen
    assert decoded.phase == "incremental"
    assert decoded.catalog == full_catalog


def test_corrupt_checkpoints_are_rejected(initial_catalog, tiny_config, rng):
    model, weights = _trained_like(initial_catalog, tiny_config, rng)
    payload = encode_checkpoint(snapshot(model, weights))
    with pytest.raises(BadMagicError):
        decode_checkpoint(b"XXXX" + payload[4:])
    with pytest.raises(VersionMismatchError):
        decode_checkpoint(payload[:4] + struct.pack("<H", 99) + payload[6:])
    with pytest.raises(TruncatedFileError):
        decode_checkpoint(payload[:-3])
    with pytest.raises(TruncatedFileError):
        decode_checkpoint(payload[:5])


def test_corrupt_checkpoint_metadata_is_a_manifest_error(initial_catalog, tiny_config, rng):
    model, weights = _trained_like(initial_catalog, tiny_config, rng)
    payload = encode_checkpoint(snapshot(model, weights))
    meta_len, = struct.unpack("<I", payload[6:10])
    with pytest.raises(ManifestMismatchError):
        decode_checkpoint(payload[:10] + b"\xff" + payload[11:])
    with pytest.raises(ManifestMismatchError):
        decode_checkpoint(payload[:10] + b"[" + payload[11:])
    empty = b"{}".ljust(meta_len)
    with pytest.raises(ManifestMismatchError, match="metadata lacks"):
        decode_checkpoint(payload[:10] + empty + payload[10 + meta_len:])
    checkpoint = decode_checkpoint(payload)
    checkpoint.meta["catalog"] = {"groups": "Z"}
    with pytest.raises(ManifestMismatchError):
        checkpoint.catalog


def test_restored_model_forecasts_identically(tmp_path, initial_catalog, tiny_config, rng):
    model, weights = _trained_like(initial_catalog, tiny_config, rng)
    path = save_checkpoint(tmp_path / "nested" / "initial.vamo", snapshot(model, weights))
    restored, restored_weights = restore_model(load_checkpoint(path))
    x = _field(rng, 5)
    assert np.array_equal(restored.forecast(x), model.forecast(x))
    assert np.array_equal(restored_weights.w.data, weights.w.data)
    assert restored_weights.recon_lambda == 0.5


def test_checkpoint_and_model_must_agree(initial_catalog, full_catalog, tiny_config, rng):
    model, weights = _trained_like(full_catalog, tiny_config, rng)
    checkpoint = snapshot(model, weights)
    with pytest.raises(ManifestMismatchError):
        checkpoint.array("encoder.kernel.7")
    smaller = VaMoeForecaster(initial_catalog, tiny_config)
    with pytest.raises(ManifestMismatchError):
        load_parameters(smaller, checkpoint, DynamicLossWeights(5))
