"""
Module containers and basic layers
Mirrors the torch.nn layout: modules register parameters and sub-modules by
attribute name, which yields stable hierarchical parameter names.
"""

from collections import OrderedDict
from typing import Dict, Iterator, Optional, Tuple

import numpy as np
from scipy.stats import truncnorm

from src.tensor_core import ops
from src.tensor_core.tensor import Parameter, Tensor, resolve_dtype

INIT_STD = 0.02


def trunc_normal(shape, rng: np.random.Generator, std: float = INIT_STD, dtype=np.float32) -> np.ndarray:
    """Normal(0, std) truncated at two standard deviations"""
    values = truncnorm.rvs(-2.0, 2.0, loc=0.0, scale=std, size=shape, random_state=rng)
    return np.asarray(values, dtype=resolve_dtype(dtype)).reshape(shape)


class Module:
    """Base class for everything holding parameters"""

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        params = self.__dict__.get("_parameters")
        modules = self.__dict__.get("_modules")
        if params is None:
            raise RuntimeError(f"{type(self).__name__}.__init__ must call Module.__init__ first")
        params.pop(name, None)
        modules.pop(name, None)
        if isinstance(value, Parameter):
            params[name] = value
        elif isinstance(value, Module):
            modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Parameter]]:
        for name, param in self._parameters.items():
            yield (f"{prefix}.{name}" if prefix else name), param
        for name, module in self._modules.items():
            yield from module.named_parameters(f"{prefix}.{name}" if prefix else name)

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def parameter_count(self, trainable_only: bool = False) -> int:
        return int(sum(p.size for p in self.parameters() if not (trainable_only and p.frozen)))

    def assign_names(self, prefix: str = ""):
        """Stamp every parameter with its hierarchical name"""
        for name, param in self.named_parameters(prefix):
            param.name = name

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class ModuleDict(Module):
    """Ordered, name-keyed collection of modules"""

    def __init__(self, modules: Optional[Dict[str, Module]] = None):
        super().__init__()
        for name, module in (modules or {}).items():
            self[name] = module

    def __setitem__(self, name: str, module: Module):
        setattr(self, name, module)

    def __getitem__(self, name: str) -> Module:
        return self._modules[name]

    def __contains__(self, name: str) -> bool:
        return name in self._modules

    def __iter__(self):
        return iter(self._modules)

    def __len__(self) -> int:
        return len(self._modules)

    def items(self):
        return self._modules.items()

    def keys(self):
        return list(self._modules.keys())


class ModuleList(ModuleDict):
    """Index-keyed collection of modules ("0", "1", ...)"""

    def __init__(self, modules=()):
        super().__init__()
        for module in modules:
            self.append(module)

    def append(self, module: Module):
        self[str(len(self))] = module

    def __getitem__(self, index) -> Module:
        return self._modules[str(index)]

    def __iter__(self):
        return iter(self._modules.values())


class ParameterList(Module):
    """Ordered parameter slices that are concatenated along one axis at use time"""

    def __init__(self, slices=(), axis: int = -1):
        super().__init__()
        object.__setattr__(self, "axis", axis)
        for param in slices:
            self.append(param)

    def append(self, param: Parameter):
        setattr(self, str(len(self._parameters)), param)

    def __len__(self) -> int:
        return len(self._parameters)

    def __getitem__(self, index) -> Parameter:
        return self._parameters[str(index)]

    def __iter__(self):
        return iter(self._parameters.values())

    def joined(self) -> Tensor:
        return ops.concat([p.value for p in self], axis=self.axis)

    def joined_array(self) -> np.ndarray:
        return np.concatenate([p.data for p in self], axis=self.axis)


# ===== Layers =====

class Linear(Module):
    """y = x W + b with W stored as [in, out]"""

    def __init__(self, in_features: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init: bool = False, bias: bool = True):
        super().__init__()
        self.in_features = in_features
        self.out_features = out_features
        shape = (in_features, out_features)
        weight = np.zeros(shape, dtype=dtype) if zero_init else trunc_normal(shape, rng, dtype=dtype)
        self.weight = Parameter(weight, dtype=dtype)
        if bias:
            self.bias = Parameter(np.zeros(out_features, dtype=dtype), decay=False, dtype=dtype)
        else:
            self.bias = None

    def forward(self, x) -> Tensor:
        out = ops.matmul(x, self.weight)
        if self.bias is not None:
            out = ops.add(out, self.bias)
        return out


class MLP(Module):
    """Two-layer perceptron with GELU: in -> hidden -> out"""

    def __init__(self, in_features: int, hidden: int, out_features: int, rng: np.random.Generator,
                 dtype=np.float32, zero_init_output: bool = False):
        super().__init__()
        self.fc1 = Linear(in_features, hidden, rng, dtype=dtype)
        self.fc2 = Linear(hidden, out_features, rng, dtype=dtype, zero_init=zero_init_output)

    def forward(self, x) -> Tensor:
        return self.fc2(ops.gelu(self.fc1(x)))


class LayerNorm(Module):
    """Layer normalisation over the last axis (eps = 1e-5)"""

    def __init__(self, channels: int, dtype=np.float32, eps: float = 1e-5):
        super().__init__()
        self.eps = eps
        self.gain = Parameter(np.ones(channels, dtype=dtype), decay=False, dtype=dtype)
        self.bias = Parameter(np.zeros(channels, dtype=dtype), decay=False, dtype=dtype)

    def forward(self, x) -> Tensor:
        return ops.layer_norm(x, self.gain, self.bias, eps=self.eps)


class Identity(Module):
    def forward(self, x):
        return x
