"""
Training loop
Mini-batch AdamW training of the forecaster on normalized pairs, with periodic
evaluation rows appended to the metrics log
"""

import time
from dataclasses import dataclass, field
from typing import Callable, List, Optional

import numpy as np
from loguru import logger

from src.data.dataset import Dataset
from src.errors import NonFiniteError
from src.losses.objectives import DynamicLossWeights, LossBreakdown, total_loss
from src.losses.optimizer import OptimizerState, optimizer_step, zero_grad
from src.model.checkpoint import parameter_table
from src.model.network import VaMoeForecaster
from src.tensor_core import Tape

# Evaluation callback: (epoch, last loss breakdown) -> metrics rows
EvalHook = Callable[[int, LossBreakdown], list]


@dataclass
class TrainingResult:
    steps: int = 0
    epochs: int = 0
    wall_clock: float = 0.0
    losses: List[float] = field(default_factory=list)
    mse: List[float] = field(default_factory=list)
    metrics: list = field(default_factory=list)

    @property
    def final_loss(self) -> float:
        return self.losses[-1] if self.losses else float("nan")


def supervision_mask(catalog, fraction: float) -> Optional[np.ndarray]:
    """
    Channel mask keeping an evenly spaced `fraction` of the old channels and all new ones

    None when every channel is supervised.
    """
    if fraction >= 1.0 or not catalog.is_expanded:
        return None
    n = catalog.n_initial
    keep = max(1, int(round(fraction * n)))
    mask = np.zeros(catalog.channel_count)
    mask[np.linspace(0, n - 1, keep).round().astype(int)] = 1.0
    mask[n:] = 1.0
    return mask


class Trainer:
    """Owns the optimizer state of one training phase"""

    def __init__(self, model: VaMoeForecaster, loss_weights: DynamicLossWeights, lr: float,
                 weight_decay: float, grad_clip: float, batch_size: int, seed: int = 0,
                 mask: Optional[np.ndarray] = None, max_steps_per_epoch: int = 0):
        self.model = model
        self.loss_weights = loss_weights
        self.params = list(parameter_table(model, loss_weights).values())
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay)
        self.grad_clip = grad_clip
        self.batch_size = batch_size
        self.mask = mask
        self.max_steps_per_epoch = max_steps_per_epoch
        self.rng = np.random.default_rng(seed)

    def train_step(self, x: np.ndarray, y: np.ndarray) -> LossBreakdown:
        """Forward, one backward pass over the total loss, AdamW update"""
        zero_grad(self.params)
        try:
            with Tape() as tape:
                pred = self.model(x)
                breakdown = total_loss(pred, y, x, self.model, self.loss_weights, self.mask)
            tape.backward(breakdown.total)
            tape.accumulate(self.params)
            optimizer_step(self.params, self.state, self.grad_clip)
        except NonFiniteError as exc:
            raise NonFiniteError(f"step {self.state.step + 1}: {exc}") from exc
        return breakdown

    def batches(self, dataset: Dataset):
        order = self.rng.permutation(dataset.pair_count)
        starts = range(0, len(order), self.batch_size)
        if self.max_steps_per_epoch:
            starts = list(starts)[:self.max_steps_per_epoch]
        for start in starts:
            yield dataset.pairs(order[start:start + self.batch_size])

    def fit(self, dataset: Dataset, epochs: int, eval_every: int = 0,
            on_eval: Optional[EvalHook] = None) -> TrainingResult:
        """
        Train for `epochs` passes over shuffled pairs

        `on_eval` runs every `eval_every` epochs and after the last one; its time is
        not counted in the wall clock.
        """
        dataset.check_compatible(self.model.catalog)
        result = TrainingResult()
        started = time.perf_counter()
        evaluating = 0.0
        for epoch in range(1, epochs + 1):
            breakdown = None
            for x, y in self.batches(dataset):
                breakdown = self.train_step(x, y)
                result.losses.append(breakdown.total.item())
                result.mse.append(breakdown.mse)
                result.steps += 1
                logger.debug(f"epoch {epoch} step {result.steps}: loss {result.losses[-1]:.6f} "
                             f"(pred {breakdown.prediction:.6f}, recon {breakdown.reconstruction:.6f})")
            result.epochs = epoch
            logger.info(f"Epoch {epoch}/{epochs}: loss {result.final_loss:.6f}")
            if on_eval is not None and (epoch == epochs or (eval_every and epoch % eval_every == 0)):
                eval_started = time.perf_counter()
                result.metrics.extend(on_eval(epoch, breakdown))
                evaluating += time.perf_counter() - eval_started
        result.wall_clock = time.perf_counter() - started - evaluating
        return result

    def overfit(self, x: np.ndarray, y: np.ndarray, steps: int) -> TrainingResult:
        """Repeated steps on one fixed batch"""
        result = TrainingResult()
        started = time.perf_counter()
        for step in range(1, steps + 1):
            breakdown = self.train_step(x, y)
            result.losses.append(breakdown.total.item())
            result.mse.append(breakdown.mse)
            result.steps = step
            if step % 50 == 0:
                logger.info(f"Overfit step {step}/{steps}: loss {result.losses[-1]:.6e}, mse {breakdown.mse:.6e}")
        result.wall_clock = time.perf_counter() - started
        return result
