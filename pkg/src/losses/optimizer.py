"""
AdamW optimizer
Decoupled weight decay Adam over Parameter objects with optional global-norm clipping
"""

from dataclasses import dataclass, field
from typing import Dict, Iterable, List

import numpy as np
from loguru import logger

from config.settings import ADAM_BETA1, ADAM_BETA2, ADAM_EPS, GRAD_CLIP, WEIGHT_DECAY
from src.errors import NonFiniteError
from src.tensor_core import Parameter


@dataclass
class OptimizerState:
    """Moments for non-frozen parameters and the shared step count"""
    lr: float
    weight_decay: float = WEIGHT_DECAY
    beta1: float = ADAM_BETA1
    beta2: float = ADAM_BETA2
    eps: float = ADAM_EPS
    step: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)


def global_grad_norm(params: Iterable[Parameter]) -> float:
    return float(np.sqrt(sum(float(np.sum(np.square(p.grad, dtype=np.float64))) for p in params)))


def clip_grad_norm(params: List[Parameter], max_norm: float) -> float:
    """Scale gradients so their global norm is at most max_norm; returns the norm before clipping"""
    norm = global_grad_norm(params)
    if max_norm > 0 and norm > max_norm:
        scale = max_norm / (norm + 1e-12)
        for param in params:
            param.grad = (param.grad * scale).astype(param.dtype)
    return norm


def optimizer_step(params: Iterable[Parameter], state: OptimizerState, clip: float = GRAD_CLIP) -> float:
    """
    One AdamW update of every non-frozen parameter

    Frozen parameters are skipped entirely and keep no moments. Parameters with
    decay=False (biases, norms, loss weights) get no weight decay.

    Returns:
        global gradient norm before clipping
    """
    trainable = [p for p in params if not p.frozen]
    for param in trainable:
        if not np.all(np.isfinite(param.grad)):
            raise NonFiniteError(f"non-finite gradient for parameter {param.name} at step {state.step + 1}")
    norm = clip_grad_norm(trainable, clip)

    state.step += 1
    correction1 = 1.0 - state.beta1 ** state.step
    correction2 = 1.0 - state.beta2 ** state.step
    for param in trainable:
        grad = param.grad.astype(np.float64)
        key = param.name or f"param-{id(param)}"
        m = state.first_moment.get(key, np.zeros(param.shape))
        v = state.second_moment.get(key, np.zeros(param.shape))
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[key] = m
        state.second_moment[key] = v

        value = param.data.astype(np.float64)
        if param.decay and state.weight_decay:
            value = value * (1.0 - state.lr * state.weight_decay)
        value = value - state.lr * (m / correction1) / (np.sqrt(v / correction2) + state.eps)
        param.assign(value)

    logger.debug(f"optimizer step {state.step}: grad norm {norm:.4e}, {len(trainable)} parameters updated")
    return norm


def zero_grad(params: Iterable[Parameter]):
    for param in params:
        param.zero_grad()
