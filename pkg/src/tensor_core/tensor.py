"""
Dense tensors and trainable parameters
Tensors are immutable row-major arrays; parameters own a replaceable value tensor
"""

from typing import Optional, Sequence, Tuple, Union

import numpy as np

from src.errors import ShapeError

SUPPORTED_DTYPES = (np.dtype(np.float32), np.dtype(np.float64))
DEFAULT_DTYPE = np.dtype(np.float32)


def resolve_dtype(dtype) -> np.dtype:
    """Map a dtype spec ("float32", np.float64, ...) onto a supported dtype"""
    resolved = np.dtype(dtype)
    if resolved not in SUPPORTED_DTYPES:
        raise ShapeError(f"unsupported dtype {resolved}; expected float32 or float64")
    return resolved


def _freeze(array: np.ndarray) -> np.ndarray:
    array.setflags(write=False)
    return array


class Tensor:
    """Immutable dense tensor that can take part in a differentiation tape"""

    __slots__ = ("_data", "requires_grad")

    def __init__(self, data, dtype=None, requires_grad: bool = False):
        if isinstance(data, Tensor):
            data = data._data
        source = np.asarray(data)
        if dtype is None:
            dtype = source.dtype if source.dtype in SUPPORTED_DTYPES else np.float64
        self._data = _freeze(np.array(source, dtype=resolve_dtype(dtype), copy=True))
        self.requires_grad = requires_grad

    @classmethod
    def wrap(cls, array: np.ndarray, requires_grad: bool = False) -> "Tensor":
        """Adopt a freshly computed array without copying it"""
        out = cls.__new__(cls)
        if array.dtype not in SUPPORTED_DTYPES:
            array = array.astype(np.float64)
        out._data = _freeze(np.ascontiguousarray(array))
        out.requires_grad = requires_grad
        return out

    # ===== Introspection =====

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self._data.shape

    @property
    def dtype(self) -> np.dtype:
        return self._data.dtype

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        """Writable copy of the values"""
        return np.array(self._data, copy=True)

    def item(self) -> float:
        return float(self._data.reshape(-1)[0]) if self._data.size == 1 else float(self._data)

    def __len__(self) -> int:
        return self.shape[0]

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"

    # ===== Operator sugar (delegates to ops) =====

    def __add__(self, other):
        from src.tensor_core import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from src.tensor_core import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from src.tensor_core import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.tensor_core import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from src.tensor_core import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from src.tensor_core import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from src.tensor_core import ops
        return ops.div(self, other)

    def __neg__(self):
        from src.tensor_core import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from src.tensor_core import ops
        return ops.matmul(self, other)


class Parameter:
    """
    Named trainable value

    The value tensor is replaced (never mutated) on update. A frozen parameter is
    excluded from differentiation and from optimizer updates.
    """

    def __init__(self, value, name: str = "", frozen: bool = False, decay: bool = True, dtype=None):
        array = np.array(value.data if isinstance(value, Tensor) else value,
                         dtype=resolve_dtype(dtype or getattr(value, "dtype", DEFAULT_DTYPE)), copy=True)
        self.name = name
        self.decay = decay
        self._frozen = frozen
        self.value = Tensor.wrap(array, requires_grad=not frozen)
        self.grad = np.zeros_like(array)

    @property
    def frozen(self) -> bool:
        return self._frozen

    @frozen.setter
    def frozen(self, flag: bool):
        self._frozen = bool(flag)
        self.value = Tensor.wrap(self.value.data, requires_grad=not self._frozen)

    @property
    def data(self) -> np.ndarray:
        return self.value.data

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.value.shape

    @property
    def dtype(self) -> np.dtype:
        return self.value.dtype

    @property
    def size(self) -> int:
        return self.value.size

    def assign(self, array: np.ndarray):
        """Replace the value with a new array of identical shape"""
        array = np.asarray(array, dtype=self.dtype)
        if array.shape != self.shape:
            raise ShapeError(f"cannot assign shape {array.shape} to parameter {self.name} of shape {self.shape}")
        self.value = Tensor.wrap(np.array(array, copy=True), requires_grad=not self._frozen)

    def zero_grad(self):
        self.grad = np.zeros(self.shape, dtype=self.dtype)

    def __repr__(self) -> str:
        state = "frozen" if self._frozen else "trainable"
        return f"Parameter({self.name!r}, shape={self.shape}, {state})"


TensorLike = Union[Tensor, Parameter, float, int, np.ndarray, Sequence[float]]


def as_tensor(value: TensorLike, like: Optional[Tensor] = None) -> Tensor:
    """Coerce parameters, arrays and scalars into a tensor (scalars take the dtype of `like`)"""
    if isinstance(value, Tensor):
        return value
    if isinstance(value, Parameter):
        return value.value
    dtype = like.dtype if like is not None else None
    return Tensor(value, dtype=dtype)
