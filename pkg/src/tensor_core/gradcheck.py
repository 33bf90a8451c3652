"""
Finite-difference gradient checking
Compares tape gradients against central differences of a randomly projected
scalar of the operation's output.
"""

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np

from src.tensor_core import ops
from src.tensor_core.tape import Tape
from src.tensor_core.tensor import Parameter, Tensor

FD_STEP = 1e-5


@dataclass
class GradcheckResult:
    """Outcome of one gradient check"""
    name: str
    worst_relative_error: float
    tolerance: float
    worst_point: Tuple = field(default_factory=tuple)
    points: int = 0

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.worst_relative_error)) and self.worst_relative_error <= self.tolerance

    def describe(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status} {self.name}: worst rel err {self.worst_relative_error:.3e} "
                f"(tol {self.tolerance:.0e}, {self.points} points, point {self.worst_point})")


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> Tuple[float, int]:
    """max |a - n| scaled by the larger of max |a|, max |n|; also returns the flat index of the worst entry"""
    analytic = np.asarray(analytic, dtype=np.float64).reshape(-1)
    numeric = np.asarray(numeric, dtype=np.float64).reshape(-1)
    diff = np.abs(analytic - numeric)
    scale = max(np.abs(analytic).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-12)
    worst = int(np.argmax(diff)) if diff.size else 0
    return float(diff.max(initial=0.0) / scale), worst


def _sample_indices(size: int, max_points: Optional[int], rng: np.random.Generator) -> np.ndarray:
    if max_points is None or size <= max_points:
        return np.arange(size)
    return np.sort(rng.choice(size, size=max_points, replace=False))


def projected(output: Tensor, weights: np.ndarray) -> Tensor:
    """Scalar <output, weights>"""
    return ops.sum(ops.mul(output, Tensor(weights, dtype=output.dtype)))


def check_gradient(name: str, fn: Callable[..., Tensor], inputs: Sequence[np.ndarray],
                   tolerance: float = 1e-4, eps: float = FD_STEP,
                   max_points: Optional[int] = 64, seed: int = 0,
                   differentiable: Optional[Sequence[bool]] = None) -> GradcheckResult:
    """
    Check d<fn(*inputs), r>/d(inputs) against central differences

    Args:
        name: label used in the report
        fn: maps input tensors to an output tensor
        inputs: float64 arrays
        tolerance: maximum accepted relative error
        max_points: entries perturbed per input (all when None)
        differentiable: per-input flag; non-differentiable inputs are passed as constants
    """
    rng = np.random.default_rng(seed)
    inputs = [np.asarray(x, dtype=np.float64) for x in inputs]
    flags = list(differentiable) if differentiable is not None else [True] * len(inputs)

    reference = fn(*[Tensor(x) for x in inputs])
    weights = rng.standard_normal(reference.shape)

    def scalar(values: List[np.ndarray]) -> float:
        return projected(fn(*[Tensor(v) for v in values]), weights).item()

    with Tape() as tape:
        tensors = [Tensor(x, requires_grad=flag) for x, flag in zip(inputs, flags)]
        loss = projected(fn(*tensors), weights)
    tape.backward(loss)

    worst = (0.0, ())
    points = 0
    for position, (x, tensor, flag) in enumerate(zip(inputs, tensors, flags)):
        if not flag:
            continue
        analytic = tape.grad(tensor)
        if analytic is None:
            analytic = np.zeros_like(x)
        chosen = _sample_indices(x.size, max_points, rng)
        numeric = np.zeros(chosen.size)
        for slot, flat in enumerate(chosen):
            plus = [v.copy() for v in inputs]
            minus = [v.copy() for v in inputs]
            plus[position].reshape(-1)[flat] += eps
            minus[position].reshape(-1)[flat] -= eps
            numeric[slot] = (scalar(plus) - scalar(minus)) / (2.0 * eps)
        err, at = relative_error(np.asarray(analytic).reshape(-1)[chosen], numeric)
        points += chosen.size
        if err >= worst[0]:
            worst = (err, (position, np.unravel_index(int(chosen[at]), x.shape)))
    return GradcheckResult(name, worst[0], tolerance, worst[1], points)


def check_parameter_gradients(name: str, loss_fn: Callable[[], Tensor], parameters: Sequence[Parameter],
                              fraction: float = 0.01, tolerance: float = 1e-3, eps: float = FD_STEP,
                              seed: int = 0, min_points: int = 8) -> GradcheckResult:
    """
    Check a scalar loss's gradient w.r.t. a random sample of parameter entries

    The parameters are restored bit-exactly afterwards.
    """
    rng = np.random.default_rng(seed)
    params = [p for p in parameters if not p.frozen]
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic_all = [tape.grad(p) for p in params]

    sizes = np.array([p.size for p in params])
    total = int(sizes.sum())
    count = min(total, max(min_points, int(round(fraction * total))))
    flat_choice = np.sort(rng.choice(total, size=count, replace=False))
    offsets = np.concatenate([[0], np.cumsum(sizes)])

    analytic, numeric, where = [], [], []
    for flat in flat_choice:
        which = int(np.searchsorted(offsets, flat, side="right") - 1)
        param, local = params[which], int(flat - offsets[which])
        original = param.data.copy()
        grad = analytic_all[which]
        analytic.append(0.0 if grad is None else float(np.asarray(grad).reshape(-1)[local]))
        bumped = original.copy()
        bumped.reshape(-1)[local] += eps
        param.assign(bumped)
        up = loss_fn().item()
        bumped.reshape(-1)[local] -= 2.0 * eps
        param.assign(bumped)
        down = loss_fn().item()
        param.assign(original)
        numeric.append((up - down) / (2.0 * eps))
        where.append((param.name, local))
    err, at = relative_error(np.array(analytic), np.array(numeric))
    return GradcheckResult(name, err, tolerance, where[at] if where else (), count)
