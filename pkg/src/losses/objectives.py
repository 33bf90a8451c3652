"""
Training objectives
Dynamic per-channel weighted prediction loss, encoder-decoder reconstruction loss
and their combination
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from config.settings import RECON_LAMBDA
from src.errors import ConfigError, ShapeError
from src.tensor_core import Module, Parameter, Tensor, as_tensor, ops


class DynamicLossWeights(Module):
    """Learnable per-channel log-weights w (1 x 1 x C) and the reconstruction weight lambda"""

    def __init__(self, channels: int, recon_lambda: float = RECON_LAMBDA, dtype=np.float32):
        super().__init__()
        if recon_lambda < 0:
            raise ConfigError(f"reconstruction lambda must be >= 0, got {recon_lambda}")
        self.recon_lambda = float(recon_lambda)
        self.w = Parameter(np.zeros((1, 1, channels), dtype=dtype), decay=False)
        self.assign_names("loss")

    @property
    def channels(self) -> int:
        return self.w.shape[-1]

    def expand(self, count: int):
        """Append `count` zero weights for new channels"""
        if count < 1:
            raise ShapeError(f"cannot grow loss weights by {count}")
        grown = np.concatenate([self.w.data, np.zeros((1, 1, count), dtype=self.w.dtype)], axis=-1)
        self.w = Parameter(grown, decay=False, frozen=self.w.frozen)
        self.assign_names("loss")


def _check_pair(pred: Tensor, target: Tensor, op: str):
    if pred.shape != target.shape:
        raise ShapeError(f"{op}: prediction {pred.shape} and target {target.shape} differ")


def dynamic_prediction_loss(pred, target, weights: DynamicLossWeights,
                            mask: Optional[np.ndarray] = None) -> Tensor:
    """
    mean(r^2 * exp(-w) + w) with r = pred - target

    Args:
        pred, target: fields [..., C]
        weights: per-channel log-weights, C entries
        mask: optional 0/1 vector over channels; the mean is taken over supervised channels only

    Returns:
        scalar tensor. d/dw_c = (1 - m_c * exp(-w_c)) / C for the mean squared residual m_c
        of channel c, since the mean runs over the C channels as well
    """
    pred, target = as_tensor(pred), as_tensor(target)
    _check_pair(pred, target, "dynamic_prediction_loss")
    if pred.shape[-1] != weights.channels:
        raise ShapeError(f"prediction has {pred.shape[-1]} channels, loss weights {weights.channels}")
    residual = ops.sub(pred, target)
    term = ops.add(ops.mul(ops.square(residual), ops.exp(ops.neg(weights.w))), weights.w)
    per_channel = ops.mean(term, axis=tuple(range(term.ndim - 1)))
    if mask is None:
        return ops.mean(per_channel)
    mask = np.asarray(mask, dtype=per_channel.dtype)
    if mask.shape != per_channel.shape:
        raise ShapeError(f"channel mask {mask.shape} does not match {per_channel.shape}")
    supervised = float(mask.sum())
    if supervised <= 0:
        raise ShapeError("channel mask selects no channel")
    return ops.mul(ops.sum(ops.mul(per_channel, Tensor(mask))), 1.0 / supervised)


def reconstruction_loss(x, model) -> Tensor:
    """MSE between x and Decoder(Encoder(x)); transformer blocks are bypassed"""
    x = as_tensor(x)
    recon = model.reconstruct(x)
    _check_pair(recon, x, "reconstruction_loss")
    return ops.mean(ops.square(ops.sub(recon, x)))


@dataclass
class LossBreakdown:
    total: Tensor
    prediction: float
    reconstruction: float
    # plain mean squared prediction error, without the learned channel weights
    mse: float = 0.0


def total_loss(pred, target, x, model, weights: DynamicLossWeights,
               mask: Optional[np.ndarray] = None) -> LossBreakdown:
    """Obj_pred + lambda * Obj_recon"""
    prediction = dynamic_prediction_loss(pred, target, weights, mask)
    mse = float(np.mean(np.square(as_tensor(pred).data - as_tensor(target).data)))
    if weights.recon_lambda == 0.0:
        return LossBreakdown(prediction, prediction.item(), 0.0, mse)
    reconstruction = reconstruction_loss(x, model)
    total = ops.add(prediction, ops.mul(reconstruction, weights.recon_lambda))
    return LossBreakdown(total, prediction.item(), reconstruction.item(), mse)
