import numpy as np
import pytest

from src.data import NormalizationStats, normalize
from src.errors import CatalogMismatchError, ConfigError, NonFiniteError, UnknownChannelError
from src.harness import (EvaluationReport, MetricsLog, RunConfig, Trainer, evaluate_forecaster, evaluate_model,
                         format_table, load_run_config, metrics_rows, read_metrics_csv, rollout_rmse,
                         supervision_mask)
from src.losses import DynamicLossWeights
from src.model import ModelConfig, VaMoeForecaster, default_catalog


# ===== Run configuration =====

def test_config_text_parsing():
    text = "\n".join([
        "# comment line",
        "seed = 5",
        "lead_times = 1, 3",
        "freeze_decoder_old = no",
        "width = 32   # inline comment",
        "recon_lambda = 0.25",
        "",
    ])
    config = RunConfig.from_text(text)
    assert config.seed == 5
    assert config.lead_times == [1, 3]
    assert config.freeze_decoder_old is False
    assert config.width == 32
    assert config.recon_lambda == 0.25


@pytest.mark.parametrize("text", [
    "colour = red",
    "seed = 1\nseed = 2",
    "seed = abc",
    "freeze_decoder_old = maybe",
    "seed 4",
    "lead_times = 0",
    "heads = 5",
    "old_channel_fraction = 0",
    "test_pairs = 3",
])
def test_bad_config_text_is_a_config_error(text):
    with pytest.raises(ConfigError):
        RunConfig.from_text(text)


def test_config_echo_round_trip(tmp_path, tiny_run_config):
    path = tiny_run_config.write_echo(tmp_path)
    assert RunConfig.from_file(path).as_dict() == tiny_run_config.as_dict()


def test_overrides_and_loading(tmp_path):
    config = RunConfig()
    assert config.with_overrides(seed=None).seed == config.seed
    assert config.with_overrides(seed=7).seed == 7
    with pytest.raises(ConfigError):
        config.with_overrides(colour="red")
    with pytest.raises(ConfigError):
        load_run_config(str(tmp_path / "missing.txt"))
    assert load_run_config(None, seed=9).seed == 9
    assert config.full_catalog().n_incremental == 5


# ===== Evaluation =====

@pytest.fixture
def test_split(tiny_bundle):
    stats = NormalizationStats.from_dataset(tiny_bundle.full_train)
    return tiny_bundle.test, stats


def test_identity_forecaster_scores_like_persistence(test_split):
    dataset, stats = test_split
    report = evaluate_forecaster(lambda x: x, dataset, stats, [1, 3])
    for lead in (1, 3):
        assert np.array_equal(report.model_rmse[lead], report.persistence_rmse[lead])
    frames = dataset.frames.astype(np.float64)
    count = frames.shape[0] - 3
    direct = np.sqrt(np.mean((frames[1:count + 1] - frames[:count]) ** 2, axis=(0, 1, 2)))
    assert np.allclose(report.persistence_rmse[1], direct, rtol=1e-4)
    assert report.samples == count
    assert report.beats_persistence_share(1) == 0.0
    assert "lead 3" in report.to_table()
    assert report.rmse(1, "t2m") == pytest.approx(report.model_rmse[1][report.channel_index("t2m")])
    with pytest.raises(UnknownChannelError):
        report.rmse(1, "w500")


def test_error_growth_share_counts_channels_that_worsen_with_lead():
    report = EvaluationReport(["a", "b", "c", "d"], [1, 3],
                              {1: np.array([1.0, 2.0, 3.0, 4.0]), 3: np.array([1.5, 2.0, 2.5, 5.0])},
                              {1: np.ones(4), 3: np.ones(4)}, samples=10)
    assert report.error_growth_share(1, 3) == pytest.approx(0.75)
    assert report.error_growth_share(3, 1) == pytest.approx(0.5)
    assert report.error_growth_share(1, 1) == 1.0


def test_parallel_batches_match_serial(test_split):
    dataset, stats = test_split

    def damped(x):
        return 0.9 * x

    serial = rollout_rmse(damped, dataset, stats, [1, 2], batch_size=16, workers=1)
    parallel = rollout_rmse(damped, dataset, stats, [2, 1], batch_size=2, workers=3)
    for lead in (1, 2):
        assert np.allclose(serial[lead], parallel[lead], rtol=1e-10)


def test_rollout_lead_checks(test_split):
    dataset, stats = test_split
    with pytest.raises(ConfigError):
        rollout_rmse(lambda x: x, dataset, stats, [0])
    with pytest.raises(ConfigError):
        rollout_rmse(lambda x: x, dataset, stats, [dataset.frame_count])


def test_model_evaluation_requires_matching_catalog(test_split, initial_catalog, tiny_config):
    dataset, stats = test_split
    with pytest.raises(CatalogMismatchError):
        evaluate_model(VaMoeForecaster(initial_catalog, tiny_config), dataset, stats, [1])


# ===== Metrics log =====

def test_metrics_rows_csv_round_trip(tmp_path, test_split):
    dataset, stats = test_split
    report = evaluate_forecaster(lambda x: x, dataset, stats, [1, 3])
    rows = metrics_rows(report, "initial", 2, 0.5, 0.125, 1234)
    assert len(rows) == 2 * dataset.channel_count
    assert {r.lead for r in rows} == {1, 3}
    log = MetricsLog()
    log.extend(rows)
    log.extend(rows[:1])
    assert len(log) == len(rows) + 1
    assert read_metrics_csv(log.write_csv(tmp_path / "metrics.csv")) == log.rows


def test_format_table_aligns_columns():
    table = format_table(["arm", "rmse"], [["A", 0.123456789], ["B", 2.0]])
    lines = table.splitlines()
    assert lines[0].split() == ["arm", "rmse"]
    assert set(lines[1].replace(" ", "")) == {"-"}
    assert lines[2].split() == ["A", "0.12346"]


# ===== Training =====

def test_supervision_mask(full_catalog, initial_catalog):
    mask = supervision_mask(full_catalog, 0.4)
    assert mask.tolist() == [1, 0, 0, 0, 1, 1, 1, 1, 1, 1]
    assert supervision_mask(full_catalog, 1.0) is None
    assert supervision_mask(initial_catalog, 0.4) is None


@pytest.fixture
def initial_trainer(tiny_bundle, initial_catalog, tiny_config):
    stats = NormalizationStats.from_dataset(tiny_bundle.initial_train)
    data = normalize(tiny_bundle.initial_train, stats)
    model = VaMoeForecaster(initial_catalog, tiny_config, seed=0)
    weights = DynamicLossWeights(5)
    return Trainer(model, weights, lr=0.005, weight_decay=0.0, grad_clip=1.0, batch_size=4, seed=0), data


def test_overfitting_one_batch_lowers_the_loss(initial_trainer):
    trainer, data = initial_trainer
    x, y = data.pairs([0, 1])
    result = trainer.overfit(x, y, 30)
    assert result.steps == 30
    assert len(result.mse) == 30
    assert result.losses[-1] < result.losses[0]
    assert result.mse[-1] < result.mse[0]


def test_memorising_one_sample_shrinks_prediction_mse_a_thousandfold(rng):
    catalog = default_catalog(1)
    config = ModelConfig(grid=(4, 8), width=8, heads=2, depth=1, patch_size=1, dtype="float64")
    model = VaMoeForecaster(catalog, config, seed=0)
    weights = DynamicLossWeights(5, recon_lambda=0.0, dtype=np.float64)
    trainer = Trainer(model, weights, lr=0.01, weight_decay=0.0, grad_clip=0.0, batch_size=1, seed=0)
    x, y = rng.standard_normal((1, 4, 8, 5)), rng.standard_normal((1, 4, 8, 5))
    result = trainer.overfit(x, y, 500)
    assert result.mse[-1] < 1e-3 * result.mse[0]


def test_fit_counts_steps_and_calls_evaluation(initial_trainer, tiny_bundle):
    trainer, data = initial_trainer
    calls = []

    def on_eval(epoch, breakdown):
        calls.append(epoch)
        return [epoch]

    result = trainer.fit(data, epochs=2, eval_every=1, on_eval=on_eval)
    assert result.steps == 2 * 3
    assert calls == [1, 2]
    assert result.metrics == [1, 2]
    assert result.wall_clock >= 0.0
    trainer.max_steps_per_epoch = 1
    assert trainer.fit(data, epochs=2).steps == 2
    with pytest.raises(CatalogMismatchError):
        trainer.fit(tiny_bundle.full_train, epochs=1)


def test_non_finite_loss_names_the_step(initial_trainer):
    trainer, data = initial_trainer
    trainer.loss_weights.w.assign(np.full(trainer.loss_weights.w.shape, -1000.0))
    x, y = data.pairs([0])
    with pytest.raises(NonFiniteError, match="step 1"):
        trainer.train_step(x, y)
