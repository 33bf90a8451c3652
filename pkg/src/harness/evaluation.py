"""
Forecast evaluation
Autoregressive rollouts on the test split, scored per channel and lead time in
physical units against the persistence baseline
"""

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np
from loguru import logger

from src.data.dataset import Dataset
from src.data.normalization import NormalizationStats
from src.errors import ConfigError, UnknownChannelError
from src.losses.metrics import latitude_weights

ForecastFn = Callable[[np.ndarray], np.ndarray]


def persistence(x: np.ndarray) -> np.ndarray:
    return x


@dataclass
class EvaluationReport:
    """RMSE [C] per lead for the model and for persistence"""
    channel_names: List[str]
    leads: List[int]
    model_rmse: Dict[int, np.ndarray]
    persistence_rmse: Dict[int, np.ndarray]
    samples: int

    def channel_index(self, channel: str) -> int:
        if channel not in self.channel_names:
            raise UnknownChannelError(f"unknown channel {channel!r}")
        return self.channel_names.index(channel)

    def rmse(self, lead: int, channel: str) -> float:
        return float(self.model_rmse[lead][self.channel_index(channel)])

    def mean_rmse(self, lead: int, channels: Optional[Sequence[int]] = None) -> float:
        values = self.model_rmse[lead]
        if channels is not None:
            if len(channels) == 0:
                return float("nan")
            values = values[list(channels)]
        return float(np.mean(values))

    def beats_persistence_share(self, lead: int) -> float:
        return float(np.mean(self.model_rmse[lead] < self.persistence_rmse[lead]))

    def error_growth_share(self, short: int, long: int) -> float:
        return float(np.mean(self.model_rmse[long] >= self.model_rmse[short]))

    def to_table(self) -> str:
        header = f"{'channel':<10}" + "".join(f"  {'rmse@' + str(l):>12}  {'persist@' + str(l):>12}"
                                               for l in self.leads)
        lines = [header]
        for c, name in enumerate(self.channel_names):
            lines.append(f"{name:<10}" + "".join(
                f"  {self.model_rmse[l][c]:>12.5g}  {self.persistence_rmse[l][c]:>12.5g}" for l in self.leads))
        for lead in self.leads:
            lines.append(f"lead {lead}: model beats persistence on "
                         f"{100 * self.beats_persistence_share(lead):.1f}% of channels")
        return "\n".join(lines) + "\n"


def _batch_errors(forecast: ForecastFn, frames: np.ndarray, starts: np.ndarray, leads: Sequence[int],
                  stats: NormalizationStats, row_weights: Optional[np.ndarray]) -> Dict[int, np.ndarray]:
    """Sum of squared physical-unit errors [C] per lead for rollouts from `starts`"""
    state = stats.normalize(frames[starts])
    sums = {}
    for step in range(1, max(leads) + 1):
        state = np.asarray(forecast(state), dtype=frames.dtype)
        if step in leads:
            error = stats.denormalize(state).astype(np.float64) - frames[starts + step].astype(np.float64)
            squared = error * error
            if row_weights is not None:
                squared = squared * row_weights[:, None, None]
            sums[step] = squared.sum(axis=(0, 1, 2))
    return sums


def rollout_rmse(forecast: ForecastFn, dataset: Dataset, stats: NormalizationStats, leads: Sequence[int],
                 batch_size: int = 16, workers: int = 1, latitude_weighted: bool = False) -> Dict[int, np.ndarray]:
    """
    Per-channel RMSE at each lead for autoregressive rollouts of `forecast`

    Every start frame with a target at the longest lead is used, so all leads share
    the same starts. Batches may run in parallel; results are summed in batch order.
    """
    leads = sorted(set(int(l) for l in leads))
    if not leads or leads[0] < 1:
        raise ConfigError(f"lead times must be positive, got {leads}")
    frames = dataset.frames
    count = frames.shape[0] - leads[-1]
    if count < 1:
        raise ConfigError(f"test split of {frames.shape[0]} frames is too short for lead {leads[-1]}")
    starts = np.arange(count)
    batches = [starts[i:i + batch_size] for i in range(0, count, batch_size)]
    row_weights = latitude_weights(frames.shape[1]) if latitude_weighted else None

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        partials = list(pool.map(lambda b: _batch_errors(forecast, frames, b, leads, stats, row_weights), batches))

    cells = count * frames.shape[1] * frames.shape[2]
    return {lead: np.sqrt(sum(p[lead] for p in partials) / cells) for lead in leads}


def evaluate_forecaster(forecast: ForecastFn, dataset: Dataset, stats: NormalizationStats, leads: Sequence[int],
                        batch_size: int = 16, workers: int = 1, latitude_weighted: bool = False) -> EvaluationReport:
    """Model and persistence scored through the same rollout path"""
    model_scores = rollout_rmse(forecast, dataset, stats, leads, batch_size, workers, latitude_weighted)
    baseline = rollout_rmse(persistence, dataset, stats, leads, batch_size, workers, latitude_weighted)
    report = EvaluationReport(dataset.catalog.channel_names, sorted(model_scores), model_scores, baseline,
                              dataset.frames.shape[0] - max(model_scores))
    for lead in report.leads:
        logger.info(f"Lead {lead}: mean RMSE {report.mean_rmse(lead):.5g}, "
                    f"beats persistence on {100 * report.beats_persistence_share(lead):.1f}% of channels")
    return report


def evaluate_model(model, dataset: Dataset, stats: NormalizationStats, leads: Sequence[int],
                   batch_size: int = 16, workers: int = 1, latitude_weighted: bool = False) -> EvaluationReport:
    dataset.check_compatible(model.catalog)
    return evaluate_forecaster(model.forecast, dataset, stats, leads, batch_size, workers, latitude_weighted)
