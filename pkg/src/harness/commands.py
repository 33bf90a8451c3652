"""
Harness commands
The experimental protocol: initial training, incremental training, evaluation,
the three-arm forgetting comparison, the architecture ablation and the
gradient-check suite. Every command writes into the run directory it is given.
"""

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from loguru import logger

from config.settings import AVAILABLE_ARCHITECTURES, GRADCHECK_DEPTH, GRADCHECK_GRID, GRADCHECK_WIDTH
from src.data import DatasetBundle, NormalizationStats, load_bundle, load_dataset, make_bundle, normalize
from src.errors import ConfigError, GradcheckFailure, PhaseError
from src.harness.evaluation import EvaluationReport, evaluate_model
from src.harness.gradcheck_suite import run_suite, suite_table
from src.harness.reports import MetricsLog, format_table, metrics_rows, write_csv, write_text
from src.harness.run_config import RunConfig
from src.harness.trainer import Trainer, TrainingResult, supervision_mask
from src.incremental import (PhasePlan, apply_freeze, expand_model, finetune_plan, incremental_plan, initial_plan,
                             trainable_ratio, verify_preservation)
from src.incremental.preservation import PreservationReport
from src.losses.objectives import DynamicLossWeights
from src.model import (Checkpoint, VaMoeForecaster, load_checkpoint, parameter_table, restore_model,
                       save_checkpoint, snapshot)

FORGETTING_COLUMNS = ["seed", "arm", "lead", "upper_air_rmse", "surface_rmse", "upper_air_degradation",
                      "wall_clock"]
ABLATION_COLUMNS = ["architecture", "parameters", "lead", "mean_rmse", "beats_persistence", "wall_clock"]

ARMS = {
    "A": "frozen incremental",
    "B": "naive fine-tune",
    "C": "full retrain",
}


@dataclass
class PhaseOutcome:
    """Everything one training phase leaves behind"""
    model: VaMoeForecaster
    loss_weights: DynamicLossWeights
    checkpoint: Checkpoint
    checkpoint_path: Path
    stats: NormalizationStats
    report: EvaluationReport
    training: TrainingResult
    metrics: MetricsLog
    preservation: Optional[PreservationReport] = None
    trainable_ratio: float = 1.0


# ===== Shared helpers =====

def load_data(config: RunConfig) -> DatasetBundle:
    """Dataset bundle from `data_dir`, or generated from the config seed"""
    if config.data_dir:
        return load_bundle(config.data_dir, config.full_catalog())
    return make_bundle(config.full_catalog(), config.split_sizes(), seed=config.seed,
                       grid=(config.grid_height, config.grid_width), spin_up=config.spin_up_steps)


def trainable_count(model: VaMoeForecaster, loss_weights: Optional[DynamicLossWeights] = None) -> int:
    return sum(p.size for p in parameter_table(model, loss_weights).values() if not p.frozen)


def _evaluate(model: VaMoeForecaster, dataset, stats: NormalizationStats, config: RunConfig) -> EvaluationReport:
    return evaluate_model(model, dataset, stats, config.lead_times, batch_size=config.eval_batch_size,
                          workers=config.eval_workers, latitude_weighted=config.latitude_weighted)


def _fit(model: VaMoeForecaster, loss_weights: DynamicLossWeights, train, test, stats: NormalizationStats,
         config: RunConfig, phase: str, lr: float, epochs: int,
         mask: Optional[np.ndarray] = None) -> Tuple[TrainingResult, MetricsLog]:
    """Train on the normalized split, appending evaluation rows on `test` to a metrics log"""
    log = MetricsLog()
    trainable = trainable_count(model, loss_weights)

    def on_eval(epoch, breakdown):
        report = _evaluate(model, test, stats, config)
        rows = metrics_rows(report, phase, epoch, breakdown.prediction, breakdown.reconstruction, trainable)
        log.extend(rows)
        return rows

    trainer = Trainer(model, loss_weights, lr, config.weight_decay, config.grad_clip, config.batch_size,
                      seed=config.seed, mask=mask, max_steps_per_epoch=config.max_steps_per_epoch)
    result = trainer.fit(normalize(train, stats), epochs, config.eval_every, on_eval)
    logger.info(f"{phase}: {result.steps} steps in {result.wall_clock:.1f}s, final loss {result.final_loss:.6f}")
    return result, log


def _finish(run_dir: Path, name: str, model: VaMoeForecaster, loss_weights: DynamicLossWeights, phase: str,
            stats: NormalizationStats, report: EvaluationReport, log: MetricsLog):
    """Checkpoint, metrics CSV and evaluation report of one phase"""
    checkpoint = snapshot(model, loss_weights, phase, stats.to_dict())
    path = save_checkpoint(run_dir / f"{name}.vamo", checkpoint)
    log.write_csv(run_dir / f"metrics_{name}.csv")
    write_text(run_dir / f"eval_{name}.txt", report.to_table())
    return checkpoint, path


# ===== Initial phase =====

def train_initial(config: RunConfig, run_dir, bundle: Optional[DatasetBundle] = None) -> PhaseOutcome:
    """Train the forecaster on the initial channels of the initial window"""
    run_dir = Path(run_dir)
    bundle = bundle or load_data(config)
    model = VaMoeForecaster(config.initial_catalog(), config.model_config(), seed=config.seed)
    loss_weights = DynamicLossWeights(model.channel_count, config.recon_lambda, dtype=model.dtype)
    apply_freeze(model, initial_plan(), loss_weights)
    stats = NormalizationStats.from_dataset(bundle.initial_train)
    stats.save(run_dir / "normalization_initial.txt")
    test = bundle.initial_test

    if config.overfit_samples > 0:
        training, log = _overfit(model, loss_weights, bundle, stats, config, run_dir)
    else:
        training, log = _fit(model, loss_weights, bundle.initial_train, test, stats, config, "initial",
                             config.lr_initial, config.initial_epochs)
    report = _evaluate(model, test, stats, config)
    checkpoint, path = _finish(run_dir, "initial", model, loss_weights, "initial", stats, report, log)
    return PhaseOutcome(model, loss_weights, checkpoint, path, stats, report, training, log,
                        trainable_ratio=trainable_ratio(model, loss_weights))


def _overfit(model, loss_weights, bundle: DatasetBundle, stats: NormalizationStats, config: RunConfig,
             run_dir: Path):
    """Fixed-batch memorisation run; writes the loss curve instead of metrics rows"""
    samples = min(config.overfit_samples, bundle.initial_train.pair_count)
    x, y = normalize(bundle.initial_train, stats).pairs(np.arange(samples))
    trainer = Trainer(model, loss_weights, config.lr_initial, config.weight_decay, config.grad_clip, samples,
                      seed=config.seed)
    result = trainer.overfit(x, y, config.overfit_steps)
    write_csv(run_dir / "overfit_losses.csv", ["step", "loss", "mse"],
              ({"step": step, "loss": loss, "mse": mse}
               for step, (loss, mse) in enumerate(zip(result.losses, result.mse), 1)))
    logger.info(f"Overfit on {samples} samples: loss {result.losses[0]:.6e} -> {result.final_loss:.6e} "
                f"(ratio {result.final_loss / result.losses[0]:.3e}), "
                f"mse {result.mse[0]:.6e} -> {result.mse[-1]:.6e}")
    return result, MetricsLog()


def cmd_train_initial(config: RunConfig, run_dir) -> PhaseOutcome:
    return train_initial(config, run_dir)


# ===== Incremental phase =====

def train_incremental(config: RunConfig, base: Checkpoint, run_dir, bundle: Optional[DatasetBundle] = None,
                      freeze: bool = True, name: str = "incremental") -> PhaseOutcome:
    """
    Expand an initial-phase checkpoint with the new variable groups and train it

    With `freeze` the incremental freeze plan keeps every pretrained parameter fixed;
    without it every parameter trains (the naive fine-tune comparator).
    """
    run_dir = Path(run_dir)
    if base.phase != "initial":
        raise PhaseError(f"base checkpoint is from phase {base.phase!r}, expected 'initial'")
    bundle = bundle or load_data(config)
    model, loss_weights = restore_model(base)
    bundle.initial_train.check_compatible(model.catalog)

    old_stats = (NormalizationStats.from_dict(base.normalization) if base.normalization
                 else NormalizationStats.from_dataset(bundle.initial_train))
    new_stats = NormalizationStats.from_dataset(bundle.incremental_train)
    catalog = bundle.incremental_train.catalog
    stats = old_stats.merge(new_stats.subset(catalog.channel_names[catalog.n_initial:]))
    stats.save(run_dir / f"normalization_{name}.txt")

    expand_model(model, config.new_groups(), seed=config.seed,
                 reinit_index_projector=config.reinit_index_projector, loss_weights=loss_weights)
    plan: PhasePlan = (incremental_plan(model.catalog, config.freeze_decoder_old) if freeze
                       else finetune_plan(model.catalog))
    apply_freeze(model, plan, loss_weights)
    ratio = trainable_ratio(model, loss_weights)
    logger.info(f"Trainable parameter ratio: {ratio:.3f}")

    mask = supervision_mask(model.catalog, config.old_channel_fraction)
    training, log = _fit(model, loss_weights, bundle.incremental_train, bundle.test, stats, config, name,
                         config.lr_incremental, config.incremental_epochs, mask)
    report = _evaluate(model, bundle.test, stats, config)
    checkpoint, path = _finish(run_dir, name, model, loss_weights, "incremental", stats, report, log)

    preservation = verify_preservation(base, checkpoint, plan, workers=config.eval_workers)
    preservation.write(run_dir)
    write_text(run_dir / f"trainable_{name}.txt",
               f"trainable = {trainable_count(model, loss_weights)}\n"
               f"total = {sum(p.size for p in parameter_table(model, loss_weights).values())}\n"
               f"ratio = {ratio!r}\n")
    preservation.check()
    return PhaseOutcome(model, loss_weights, checkpoint, path, stats, report, training, log, preservation, ratio)


def cmd_train_incremental(config: RunConfig, base_path, run_dir) -> PhaseOutcome:
    return train_incremental(config, load_checkpoint(base_path), run_dir)


# ===== Full retrain =====

def train_full(config: RunConfig, run_dir, bundle: Optional[DatasetBundle] = None) -> PhaseOutcome:
    """From scratch on the whole initial window with every channel"""
    run_dir = Path(run_dir)
    bundle = bundle or load_data(config)
    model = VaMoeForecaster(config.full_catalog(), config.model_config(), seed=config.seed)
    loss_weights = DynamicLossWeights(model.channel_count, config.recon_lambda, dtype=model.dtype)
    apply_freeze(model, initial_plan(), loss_weights)
    stats = NormalizationStats.from_dataset(bundle.full_train)
    training, log = _fit(model, loss_weights, bundle.full_train, bundle.test, stats, config, "full",
                         config.lr_initial, config.full_retrain_epochs)
    report = _evaluate(model, bundle.test, stats, config)
    checkpoint, path = _finish(run_dir, "full", model, loss_weights, "full", stats, report, log)
    return PhaseOutcome(model, loss_weights, checkpoint, path, stats, report, training, log)


# ===== Evaluation =====

def cmd_evaluate(config: RunConfig, checkpoint_path, dataset_path, run_dir) -> EvaluationReport:
    """Score a checkpoint on a dataset file; an expanded dataset is cut down for an initial model"""
    run_dir = Path(run_dir)
    checkpoint = load_checkpoint(checkpoint_path)
    if not checkpoint.normalization:
        raise ConfigError(f"{checkpoint_path}: checkpoint carries no normalization statistics")
    model, loss_weights = restore_model(checkpoint)
    stats = NormalizationStats.from_dict(checkpoint.normalization)
    dataset = load_dataset(dataset_path)
    if dataset.catalog.is_expanded and not model.catalog.is_expanded:
        dataset = dataset.restrict_initial()
    report = _evaluate(model, dataset, stats, config)
    log = MetricsLog()
    log.extend(metrics_rows(report, "evaluate", 0, float("nan"), float("nan"), trainable_count(model, loss_weights)))
    log.write_csv(run_dir / "metrics_evaluate.csv")
    write_text(run_dir / "eval_report.txt", report.to_table())
    return report


# ===== Forgetting comparison =====

def _upper_surface(report: EvaluationReport, lead: int, n_initial: int):
    channels = len(report.channel_names)
    return (report.mean_rmse(lead, range(n_initial)),
            report.mean_rmse(lead, range(n_initial, channels)))


def forgetting_rows(seed: int, baseline: EvaluationReport, arms: Dict[str, Optional[PhaseOutcome]],
                    n_initial: int) -> List[Dict]:
    """
    One row per arm and lead

    An arm mapped to None was not trained; it reports the initial checkpoint's
    upper-air numbers with zero cost.
    """
    rows = []
    for arm, outcome in arms.items():
        for lead in baseline.leads:
            before = baseline.mean_rmse(lead)
            if outcome is None:
                upper, surface, wall = before, float("nan"), 0.0
            else:
                upper, surface = _upper_surface(outcome.report, lead, n_initial)
                wall = outcome.training.wall_clock
            rows.append({"seed": seed, "arm": arm, "lead": lead, "upper_air_rmse": upper,
                         "surface_rmse": surface, "upper_air_degradation": upper - before, "wall_clock": wall})
    return rows


def summarize_forgetting(rows: Sequence[Dict]) -> str:
    """Mean over seeds per arm and lead, plus the two comparisons the experiment is about"""
    table = []
    means = {}
    for arm in ARMS:
        for lead in sorted({r["lead"] for r in rows}):
            picked = [r for r in rows if r["arm"] == arm and r["lead"] == lead]
            if not picked:
                continue
            mean = {k: float(np.mean([r[k] for r in picked]))
                    for k in ("upper_air_rmse", "surface_rmse", "upper_air_degradation", "wall_clock")}
            means[arm, lead] = mean
            table.append([arm, ARMS[arm], lead, mean["upper_air_rmse"], mean["surface_rmse"],
                          mean["upper_air_degradation"], mean["wall_clock"]])
    text = format_table(["arm", "method", "lead", "upper_air_rmse", "surface_rmse", "degradation", "wall_clock"],
                        table)
    seeds = len({r["seed"] for r in rows})
    degradation = {arm: np.mean([m["upper_air_degradation"] for (a, _), m in means.items() if a == arm])
                   for arm in ARMS if any(a == arm for a, _ in means)}
    wall = {arm: np.mean([m["wall_clock"] for (a, _), m in means.items() if a == arm]) for arm in degradation}
    lines = [f"seeds: {seeds}"]
    if "A" in degradation and "B" in degradation:
        lines.append(f"frozen degradation {degradation['A']:.5g} <= fine-tune degradation {degradation['B']:.5g}: "
                     f"{'yes' if degradation['A'] <= degradation['B'] else 'no'}")
    if "A" in wall and "C" in wall:
        lines.append(f"frozen wall clock {wall['A']:.2f}s < full retrain {wall['C']:.2f}s: "
                     f"{'yes' if wall['A'] < wall['C'] else 'no'}")
    return text + "\n" + "\n".join(lines) + "\n"


def cmd_forgetting_report(config: RunConfig, run_dir, bases: Optional[Sequence] = None) -> List[Dict]:
    """
    Arms A (frozen incremental), B (naive fine-tune) and C (full retrain) on identical
    data, repeated over seeds

    With `bases`, one initial checkpoint per seed is taken from disk (seed, seed+1, ...);
    otherwise each seed trains its own initial model first.
    """
    run_dir = Path(run_dir)
    seeds = len(bases) if bases else config.forgetting_seeds
    rows = []
    for index in range(seeds):
        seed_config = config.with_overrides(seed=config.seed + index)
        seed_dir = run_dir / f"seed_{seed_config.seed}"
        logger.info(f"Forgetting report: seed {seed_config.seed} ({index + 1}/{seeds})")
        bundle = load_data(seed_config)
        if bases:
            base = load_checkpoint(bases[index])
            model, _ = restore_model(base)
            stats = NormalizationStats.from_dict(base.normalization)
            baseline = _evaluate(model, bundle.initial_test, stats, seed_config)
        else:
            initial = train_initial(seed_config, seed_dir / "initial", bundle)
            base, baseline = initial.checkpoint, initial.report

        arms = {
            "A": train_incremental(seed_config, base, seed_dir / "frozen", bundle, freeze=True, name="frozen"),
            "B": train_incremental(seed_config, base, seed_dir / "finetune", bundle, freeze=False, name="finetune"),
            "C": (train_full(seed_config, seed_dir / "full", bundle) if seed_config.full_retrain_epochs > 0
                  else None),
        }
        rows.extend(forgetting_rows(seed_config.seed, baseline, arms, base.catalog.n_initial))

    write_csv(run_dir / "forgetting.csv", FORGETTING_COLUMNS, rows)
    write_text(run_dir / "forgetting_report.txt", summarize_forgetting(rows))
    return rows


# ===== Architecture ablation =====

def cmd_ablation(config: RunConfig, run_dir) -> List[Dict]:
    """Initial-phase training of every architecture on the same data and seed"""
    run_dir = Path(run_dir)
    bundle = load_data(config)
    rows = []
    for architecture in AVAILABLE_ARCHITECTURES:
        arch_config = config.with_overrides(architecture=architecture)
        outcome = train_initial(arch_config, run_dir / architecture, bundle)
        parameters = sum(p.size for p in outcome.model.parameters())
        for lead in outcome.report.leads:
            rows.append({"architecture": architecture, "parameters": parameters, "lead": lead,
                         "mean_rmse": outcome.report.mean_rmse(lead),
                         "beats_persistence": outcome.report.beats_persistence_share(lead),
                         "wall_clock": outcome.training.wall_clock})
    write_csv(run_dir / "ablation.csv", ABLATION_COLUMNS, rows)
    write_text(run_dir / "ablation_report.txt",
               format_table(ABLATION_COLUMNS, [[row[c] for c in ABLATION_COLUMNS] for row in rows]))
    return rows


# ===== Gradient checks =====

def cmd_gradcheck(config: RunConfig, run_dir) -> list:
    """Finite-difference suite; the end-to-end part uses a reduced model of the configured architecture"""
    run_dir = Path(run_dir)
    model_config = replace(config.model_config(), grid=GRADCHECK_GRID, width=GRADCHECK_WIDTH,
                           depth=GRADCHECK_DEPTH, top_k=0)
    results = run_suite(config.full_catalog(), model_config, config.gradcheck_tolerance,
                        config.gradcheck_model_tolerance, seed=config.seed)
    write_text(run_dir / "gradcheck.txt", suite_table(results))
    failed = [r for r in results if not r.passed]
    if failed:
        worst = max(failed, key=lambda r: r.worst_relative_error / r.tolerance)
        raise GradcheckFailure(f"{len(failed)} checks failed; worst {worst.name} at {worst.worst_point} "
                               f"rel err {worst.worst_relative_error:.3e} > {worst.tolerance:.0e}")
    return results
