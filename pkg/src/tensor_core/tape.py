"""
Define-by-run differentiation tape
Operations executed while a tape is active are recorded in order; backward
replays them in exact reverse order and sums gradients of reused values.
"""

import threading
from dataclasses import dataclass
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from src.errors import NonFiniteError, ShapeError
from src.tensor_core.tensor import Parameter, Tensor

BackwardFn = Callable[[np.ndarray], Tuple[Optional[np.ndarray], ...]]

_local = threading.local()


def _stack() -> List["Tape"]:
    if not hasattr(_local, "tapes"):
        _local.tapes = []
    return _local.tapes


def active_tape() -> Optional["Tape"]:
    """Innermost tape of the calling thread, if any"""
    tapes = _stack()
    return tapes[-1] if tapes else None


@dataclass
class TapeEntry:
    """One recorded operation"""
    op: str
    inputs: Tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """
    Ordered record of differentiable operations

    Usage:
        with Tape() as tape:
            loss = f(x)
        tape.backward(loss)
        dx = tape.grad(x)
    """

    def __init__(self):
        self.entries: List[TapeEntry] = []
        self._grads: Dict[int, np.ndarray] = {}
        self._keep: Dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb):
        _stack().remove(self)
        return False

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn):
        self.entries.append(TapeEntry(op, tuple(inputs), output, backward))

    def backward(self, output: Tensor, seed: Optional[np.ndarray] = None):
        """Propagate adjoints from `output` back through every recorded operation"""
        if seed is None:
            if output.size != 1:
                raise ShapeError(f"backward needs a scalar output or an explicit seed, got shape {output.shape}")
            seed = np.ones(output.shape, dtype=output.dtype)
        seed = np.asarray(seed, dtype=output.dtype)
        if seed.shape != output.shape:
            raise ShapeError(f"seed shape {seed.shape} does not match output shape {output.shape}")
        self._grads = {id(output): seed}
        self._keep = {id(output): output}
        for entry in reversed(self.entries):
            upstream = self._grads.get(id(entry.output))
            if upstream is None:
                continue
            partials = entry.backward(upstream)
            for tensor, partial in zip(entry.inputs, partials):
                if partial is None or not tensor.requires_grad:
                    continue
                if partial.shape != tensor.shape:
                    raise ShapeError(f"{entry.op}: gradient shape {partial.shape} != input shape {tensor.shape}")
                key = id(tensor)
                if key in self._grads:
                    self._grads[key] = self._grads[key] + partial
                else:
                    self._grads[key] = partial
                    self._keep[key] = tensor

    def grad(self, tensor) -> Optional[np.ndarray]:
        """Adjoint of a tensor (or a parameter's value) after backward, None if unreached"""
        if isinstance(tensor, Parameter):
            tensor = tensor.value
        return self._grads.get(id(tensor))

    def accumulate(self, parameters: Iterable[Parameter]) -> int:
        """Add the adjoints of parameter values into their .grad buffers; returns how many were reached"""
        reached = 0
        for param in parameters:
            if param.frozen:
                continue
            partial = self._grads.get(id(param.value))
            if partial is None:
                continue
            if not np.all(np.isfinite(partial)):
                raise NonFiniteError(f"non-finite gradient for parameter {param.name}")
            param.grad = param.grad + partial
            reached += 1
        return reached


def record(op: str, inputs: Sequence[Tensor], result: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap an op result and register it with the active tape when any input needs a gradient"""
    if not np.all(np.isfinite(result)):
        raise NonFiniteError(f"{op} produced non-finite values")
    tape = active_tape()
    needs_grad = tape is not None and any(t.requires_grad for t in inputs)
    output = Tensor.wrap(result, requires_grad=needs_grad)
    if needs_grad:
        tape.record(op, inputs, output, backward)
    return output
