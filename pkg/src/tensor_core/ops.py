"""
Differentiable tensor operations
Each op computes its result with numpy and registers a backward closure on the
active tape. Broadcasting follows the trailing-dimension rule and may only
expand one operand (the result always has the shape of an operand).
"""

import math
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import erf

from src.errors import DomainError, IndexOutOfRangeError, ShapeError
from src.tensor_core.tape import record
from src.tensor_core.tensor import Parameter, Tensor, TensorLike, as_tensor

Operand = Union[Tensor, Parameter]

_SQRT_2PI = math.sqrt(2.0 * math.pi)


def _pair(a: TensorLike, b: TensorLike) -> Tuple[Tensor, Tensor]:
    if isinstance(a, (Tensor, Parameter)):
        a = as_tensor(a)
        b = as_tensor(b, like=a)
    else:
        b = as_tensor(b)
        a = as_tensor(a, like=b)
    return a, b


def _broadcast_shape(a: Tensor, b: Tensor, op: str) -> Tuple[int, ...]:
    try:
        shape = np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: shapes {a.shape} and {b.shape} are not broadcastable") from None
    if shape != a.shape and shape != b.shape:
        raise ShapeError(f"{op}: broadcasting {a.shape} with {b.shape} would expand both operands")
    return shape


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum a gradient back down to an operand's (broadcast) shape"""
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ===== Elementwise =====

def add(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "add")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return record("add", (a, b), a.data + b.data, backward)


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "sub")

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return record("sub", (a, b), a.data - b.data, backward)


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "mul")

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return record("mul", (a, b), a.data * b.data, backward)


def div(a: TensorLike, b: TensorLike) -> Tensor:
    a, b = _pair(a, b)
    _broadcast_shape(a, b, "div")
    if np.any(b.data == 0):
        raise DomainError("div: division by zero")
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return record("div", (a, b), out, backward)


def neg(a: Operand) -> Tensor:
    a = as_tensor(a)
    return record("neg", (a,), -a.data, lambda g: (-g,))


def exp(a: Operand) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return record("exp", (a,), out, lambda g: (g * out,))


def log(a: Operand) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("log: non-positive input")
    return record("log", (a,), np.log(a.data), lambda g: (g / a.data,))


def square(a: Operand) -> Tensor:
    a = as_tensor(a)
    return record("square", (a,), a.data * a.data, lambda g: (2.0 * g * a.data,))


def sqrt(a: Operand) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0):
        raise DomainError("sqrt: non-positive input")
    out = np.sqrt(a.data)
    return record("sqrt", (a,), out, lambda g: (0.5 * g / out,))


_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}
_UNARY = {"exp": exp, "log": log, "square": square, "neg": neg, "sqrt": sqrt}


def elementwise(op: str, a: TensorLike, b: Optional[TensorLike] = None) -> Tensor:
    """Dispatch an elementwise op by name (binary ops need `b`)"""
    if op in _BINARY:
        if b is None:
            raise ShapeError(f"elementwise {op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        return _UNARY[op](a)
    raise DomainError(f"unknown elementwise op {op!r}")


def gelu(a: Operand) -> Tensor:
    """Exact (erf) GELU"""
    a = as_tensor(a)
    x = a.data
    cdf = 0.5 * (1.0 + erf(x / math.sqrt(2.0)))
    pdf = np.exp(-0.5 * x * x) / _SQRT_2PI

    def backward(g):
        return (g * (cdf + x * pdf)).astype(x.dtype, copy=False),

    return record("gelu", (a,), (x * cdf).astype(x.dtype, copy=False), backward)


# ===== Reductions and shape =====

def sum(a: Operand, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = np.sum(a.data, axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),

    return record("sum", (a,), np.asarray(out, dtype=a.dtype), backward)


def mean(a: Operand, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else int(np.prod([a.shape[i] for i in np.atleast_1d(axis)]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def reshape(a: Operand, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {a.shape} into {tuple(shape)}") from None
    return record("reshape", (a,), out, lambda g: (g.reshape(a.shape),))


def transpose(a: Operand, axes: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    inverse = np.argsort(axes)
    return record("transpose", (a,), np.transpose(a.data, axes), lambda g: (np.transpose(g, inverse),))


def concat(tensors: Sequence[Operand], axis: int = -1) -> Tensor:
    parts = [as_tensor(t) for t in tensors]
    if len(parts) == 1:
        return parts[0]
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {exc}") from None
    bounds = np.cumsum([p.shape[axis] for p in parts])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record("concat", parts, out, backward)


def slice_last(a: Operand, start: int, stop: int) -> Tensor:
    """Contiguous slice along the last axis"""
    a = as_tensor(a)
    if not 0 <= start < stop <= a.shape[-1]:
        raise IndexOutOfRangeError(f"slice [{start}:{stop}) outside last axis of size {a.shape[-1]}")

    def backward(g):
        full = np.zeros(a.shape, dtype=g.dtype)
        full[..., start:stop] = g
        return full,

    return record("slice", (a,), a.data[..., start:stop], backward)


# ===== Linear algebra =====

def matmul(a: Operand, b: Operand) -> Tensor:
    """
    Batched matrix product

    Args:
        a: tensor [..., m, k]
        b: matrix [k, n] shared across the batch, or tensor [..., k, n] with a's batch shape
    """
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2 operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dimensions differ ({a.shape} @ {b.shape})")
    if b.ndim > 2 and a.shape[:-2] != b.shape[:-2]:
        raise ShapeError(f"matmul: batch shapes differ ({a.shape} @ {b.shape})")

    def backward(g):
        da = g @ np.swapaxes(b.data, -1, -2)
        if b.ndim == 2:
            db = a.data.reshape(-1, a.shape[-1]).T @ g.reshape(-1, g.shape[-1])
        else:
            db = np.swapaxes(a.data, -1, -2) @ g
        return da, db

    return record("matmul", (a, b), a.data @ b.data, backward)


# ===== Normalisation =====

def layer_norm(x: Operand, gain: Operand, bias: Operand, eps: float = 1e-5) -> Tensor:
    """Per-token zero-mean/unit-variance normalisation over the last axis, then affine"""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    channels = x.shape[-1]
    if channels < 1 or gain.shape != (channels,) or bias.shape != (channels,):
        raise ShapeError(f"layer_norm: input {x.shape} with gain {gain.shape} and bias {bias.shape}")
    mu = x.data.mean(axis=-1, keepdims=True)
    centered = x.data - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    out = xhat * gain.data + bias.data

    def backward(g):
        lead = tuple(range(g.ndim - 1))
        dgain = (g * xhat).sum(axis=lead)
        dbias = g.sum(axis=lead)
        dxhat = g * gain.data
        dx = inv_std * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                        - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))
        return dx, dgain, dbias

    return record("layer_norm", (x, gain, bias), out, backward)


def softmax(x: Operand) -> Tensor:
    """Softmax over the last axis (max-subtracted)"""
    x = as_tensor(x)
    if x.shape[-1] < 1:
        raise ShapeError("softmax over an empty axis")
    shifted = np.exp(x.data - x.data.max(axis=-1, keepdims=True))
    out = shifted / shifted.sum(axis=-1, keepdims=True)

    def backward(g):
        return out * (g - (g * out).sum(axis=-1, keepdims=True)),

    return record("softmax", (x,), out, backward)


# ===== Routing =====

def topk(x: Operand, k: int) -> Tuple[np.ndarray, Tensor]:
    """
    Top-k entries per token along the last axis

    Returns:
        (indices, values): indices in descending value order, ties broken by the lower
        channel index; indices carry no gradient, values route gradients to the
        selected positions only
    """
    x = as_tensor(x)
    channels = x.shape[-1]
    if not 1 <= k <= channels:
        raise IndexOutOfRangeError(f"topk: k={k} outside [1, {channels}]")
    order = np.argsort(-x.data, axis=-1, kind="stable")[..., :k]
    order.setflags(write=False)
    values = np.take_along_axis(x.data, order, axis=-1)

    def backward(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        np.put_along_axis(full, order, g, axis=-1)
        return full,

    return order, record("topk", (x,), values, backward)


def gather_channels(x: Operand, idx: np.ndarray) -> Tensor:
    """Per-token channel selection; backward scatter-adds into the source positions"""
    x = as_tensor(x)
    idx = np.asarray(idx)
    if idx.shape[:-1] != x.shape[:-1]:
        raise ShapeError(f"gather_channels: index shape {idx.shape} does not match input {x.shape}")
    if idx.size and (idx.min() < 0 or idx.max() >= x.shape[-1]):
        raise IndexOutOfRangeError(f"gather_channels: index outside [0, {x.shape[-1]})")
    out = np.take_along_axis(x.data, idx, axis=-1)

    def backward(g):
        channels = x.shape[-1]
        flat = np.zeros((int(np.prod(x.shape[:-1], dtype=np.int64)), channels), dtype=g.dtype)
        rows = np.repeat(np.arange(flat.shape[0]), idx.shape[-1])
        np.add.at(flat, (rows, idx.reshape(-1)), g.reshape(-1))
        return flat.reshape(x.shape),

    return record("gather_channels", (x,), out, backward)


# ===== Convolutions =====

def _as_batched(x: Tensor) -> Tuple[Tensor, bool]:
    if x.ndim == 3:
        return reshape(x, (1,) + x.shape), True
    if x.ndim != 4:
        raise ShapeError(f"expected [B,H,W,C] or [H,W,C] field, got {x.shape}")
    return x, False


def conv2d(x: Operand, kernel: Operand, stride: int = 1) -> Tensor:
    """
    Cross-correlation with zero padding (kernel_size - 1) / 2

    Args:
        x: field [B,H,W,Cin] or [H,W,Cin]
        kernel: [kh,kw,Cin,Cout] with odd kh, kw
        stride: spatial stride p; H and W must be divisible by p

    Returns:
        field [B,H/p,W/p,Cout] (batch axis dropped again for unbatched input)
    """
    x, kernel = as_tensor(x), as_tensor(kernel)
    x, unbatched = _as_batched(x)
    kh, kw, cin, cout = kernel.shape
    batch, height, width, channels = x.shape
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel {kernel.shape} must have odd spatial size")
    if channels != cin:
        raise ShapeError(f"conv2d: input has {channels} channels, kernel expects {cin}")
    if stride < 1 or height % stride or width % stride:
        raise ShapeError(f"conv2d: spatial dims {height}x{width} not divisible by stride {stride}")
    ph, pw = kh // 2, kw // 2
    out_h, out_w = height // stride, width // stride
    padded = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    out = np.zeros((batch, out_h, out_w, cout), dtype=np.result_type(x.dtype, kernel.dtype))
    for i in range(kh):
        for j in range(kw):
            patch = padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :]
            out += patch @ kernel.data[i, j]

    def backward(g):
        dpadded = np.zeros(padded.shape, dtype=g.dtype)
        dkernel = np.zeros(kernel.shape, dtype=g.dtype)
        g_rows = g.reshape(-1, cout)
        for i in range(kh):
            for j in range(kw):
                patch = padded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :]
                dkernel[i, j] = patch.reshape(-1, cin).T @ g_rows
                dpadded[:, i:i + stride * out_h:stride, j:j + stride * out_w:stride, :] += g @ kernel.data[i, j].T
        return dpadded[:, ph:ph + height, pw:pw + width, :], dkernel

    result = record("conv2d", (x, kernel), out, backward)
    if unbatched:
        result = reshape(result, result.shape[1:])
    return result


def upsample_nearest(x: Operand, factor: int) -> Tensor:
    """Repeat every spatial cell factor x factor times ([B,h,w,C] -> [B,h*f,w*f,C])"""
    x = as_tensor(x)
    x, unbatched = _as_batched(x)
    if factor < 1:
        raise ShapeError(f"upsample factor must be >= 1, got {factor}")
    batch, height, width, channels = x.shape
    out = np.repeat(np.repeat(x.data, factor, axis=1), factor, axis=2)

    def backward(g):
        return g.reshape(batch, height, factor, width, factor, channels).sum(axis=(2, 4)),

    result = record("upsample", (x,), out, backward)
    if unbatched:
        result = reshape(result, result.shape[1:])
    return result
