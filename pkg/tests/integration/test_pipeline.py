"""
End-to-end protocol runs at toy size: initial phase, incremental phase, evaluation,
forgetting comparison and architecture ablation
"""

import csv

import numpy as np
import pytest

from src.data import save_dataset
from src.errors import ConfigError, PhaseError
from src.harness import (RunConfig, cmd_ablation, cmd_evaluate, cmd_forgetting_report, load_data, read_metrics_csv,
                         train_incremental, train_initial)
from src.harness.commands import ARMS
from src.model import save_checkpoint, snapshot


@pytest.fixture(scope="module")
def protocol(tmp_path_factory, tiny_run_settings):
    root = tmp_path_factory.mktemp("protocol")
    config = RunConfig(output_dir=str(root), **tiny_run_settings)
    bundle = load_data(config)
    initial = train_initial(config, root / "initial", bundle)
    incremental = train_incremental(config, initial.checkpoint, root / "incremental", bundle)
    return config, bundle, root, initial, incremental


def _read_rows(path):
    with open(path, newline="") as handle:
        return list(csv.DictReader(handle))


# ===== Initial and incremental phases =====

def test_initial_phase_outputs(protocol):
    config, bundle, root, initial, _ = protocol
    run_dir = root / "initial"
    for name in ("initial.vamo", "metrics_initial.csv", "eval_initial.txt", "normalization_initial.txt"):
        assert (run_dir / name).is_file(), name
    rows = read_metrics_csv(run_dir / "metrics_initial.csv")
    assert len(rows) == 2 * 2 * 5
    assert {r.phase for r in rows} == {"initial"}
    assert {r.epoch for r in rows} == {1, 2}
    assert initial.checkpoint.phase == "initial"
    assert initial.trainable_ratio == 1.0
    assert initial.training.steps == 2 * 3


def test_trained_model_error_grows_with_lead(protocol):
    _, _, _, initial, incremental = protocol
    for report in (initial.report, incremental.report):
        assert report.mean_rmse(3) >= report.mean_rmse(1)
        assert report.error_growth_share(1, 3) > 0.0


def test_incremental_phase_preserves_pretrained_parameters(protocol):
    _, _, root, initial, incremental = protocol
    assert incremental.preservation.clean
    for name in ("encoder.kernel.0", "decoder.kernel.0", "blocks.0.attention.query.weight",
                 "blocks.0.moe.caes.Z.expert_net.fc2.weight"):
        assert np.array_equal(incremental.checkpoint.array(name), initial.checkpoint.array(name)), name
    assert not np.array_equal(incremental.checkpoint.array("blocks.0.moe.shared.fc1.weight"),
                              initial.checkpoint.array("blocks.0.moe.shared.fc1.weight"))
    assert 0.0 < incremental.trainable_ratio < 1.0
    run_dir = root / "incremental"
    for name in ("incremental.vamo", "preservation_report.txt", "preservation_report.kv", "trainable_incremental.txt",
                 "normalization_incremental.txt"):
        assert (run_dir / name).is_file(), name
    assert len(read_metrics_csv(run_dir / "metrics_incremental.csv")) == 2 * 2 * 10
    assert "violations = 0" in (run_dir / "preservation_report.kv").read_text()


def test_incremental_normalization_keeps_initial_statistics(protocol):
    _, _, _, initial, incremental = protocol
    assert incremental.stats.channels[:5] == initial.stats.channels
    assert np.array_equal(incremental.stats.mean[:5], initial.stats.mean)


def test_incremental_needs_an_initial_checkpoint(protocol, tmp_path):
    config, bundle, _, _, incremental = protocol
    with pytest.raises(PhaseError):
        train_incremental(config, incremental.checkpoint, tmp_path, bundle)


# ===== Evaluation command =====

def test_evaluate_restores_and_scores_checkpoints(protocol, tmp_path):
    config, bundle, root, initial, incremental = protocol
    dataset_path = save_dataset(bundle.test, tmp_path / "test.vamg")

    report = cmd_evaluate(config, root / "incremental" / "incremental.vamo", dataset_path, tmp_path / "inc")
    for lead in report.leads:
        assert np.allclose(report.model_rmse[lead], incremental.report.model_rmse[lead], rtol=1e-6)
    assert (tmp_path / "inc" / "eval_report.txt").is_file()

    report = cmd_evaluate(config, root / "initial" / "initial.vamo", dataset_path, tmp_path / "init")
    assert len(report.channel_names) == 5
    rows = _read_rows(tmp_path / "init" / "metrics_evaluate.csv")
    assert len(rows) == 2 * 5
    assert {r["phase"] for r in rows} == {"evaluate"}


def test_evaluate_needs_normalization(protocol, tmp_path):
    config, bundle, _, initial, _ = protocol
    bare = snapshot(initial.model, initial.loss_weights, "initial", normalization=None)
    path = save_checkpoint(tmp_path / "bare.vamo", bare)
    with pytest.raises(ConfigError):
        cmd_evaluate(config, path, save_dataset(bundle.test, tmp_path / "test.vamg"), tmp_path)


# ===== Experiments =====

def test_forgetting_report_from_saved_base(protocol, tmp_path):
    config, _, root, _, _ = protocol
    rows = cmd_forgetting_report(config, tmp_path, bases=[root / "initial" / "initial.vamo"])
    assert len(rows) == len(ARMS) * 2
    assert {r["arm"] for r in rows} == set(ARMS)
    assert all(r["wall_clock"] > 0.0 for r in rows)
    assert len(_read_rows(tmp_path / "forgetting.csv")) == len(rows)
    report = (tmp_path / "forgetting_report.txt").read_text()
    assert "seeds: 1" in report
    assert "frozen degradation" in report
    for arm in ("frozen", "finetune", "full"):
        assert (tmp_path / f"seed_{config.seed}" / arm).is_dir()


def test_forgetting_report_without_full_retrain(tiny_run_config, tmp_path):
    config = tiny_run_config.with_overrides(full_retrain_epochs=0, initial_epochs=1, incremental_epochs=1)
    rows = cmd_forgetting_report(config, tmp_path)
    skipped = [r for r in rows if r["arm"] == "C"]
    assert len(skipped) == 2
    assert all(r["wall_clock"] == 0.0 and r["upper_air_degradation"] == 0.0 for r in skipped)
    assert (tmp_path / f"seed_{config.seed}" / "initial" / "initial.vamo").is_file()


def test_ablation_compares_all_architectures(tiny_run_config, tmp_path):
    rows = cmd_ablation(tiny_run_config.with_overrides(initial_epochs=1), tmp_path)
    assert [r["architecture"] for r in rows] == ["vamoe", "vamoe", "vit", "vit", "vit_moe", "vit_moe"]
    sizes = {r["architecture"]: r["parameters"] for r in rows}
    assert sizes["vit"] < sizes["vamoe"]
    assert (tmp_path / "ablation_report.txt").is_file()


# ===== Reproducibility and overfit mode =====

def test_same_seed_reproduces_checkpoint_and_metrics(tiny_run_config, tmp_path):
    config = tiny_run_config.with_overrides(initial_epochs=1)
    first = train_initial(config, tmp_path / "first")
    second = train_initial(config, tmp_path / "second")
    assert (tmp_path / "first" / "initial.vamo").read_bytes() == (tmp_path / "second" / "initial.vamo").read_bytes()
    assert ((tmp_path / "first" / "metrics_initial.csv").read_text()
            == (tmp_path / "second" / "metrics_initial.csv").read_text())
    assert first.training.losses == second.training.losses


def test_overfit_mode_drives_the_loss_down(tiny_run_config, tmp_path):
    outcome = train_initial(tiny_run_config.with_overrides(overfit_samples=2, lr_initial=0.005), tmp_path)
    rows = _read_rows(tmp_path / "overfit_losses.csv")
    assert len(rows) == 20
    assert float(rows[-1]["loss"]) < float(rows[0]["loss"])
    assert float(rows[-1]["mse"]) < float(rows[0]["mse"])
    assert outcome.training.mse[-1] == pytest.approx(float(rows[-1]["mse"]))
    assert outcome.training.steps == 20
