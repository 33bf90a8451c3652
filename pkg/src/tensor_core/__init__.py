"""
Tensor core package
Dense tensors, define-by-run differentiation and basic layers
"""

from .tensor import Tensor, Parameter, as_tensor, resolve_dtype
from .tape import Tape, active_tape
from .module import Module, ModuleDict, ModuleList, ParameterList, Linear, MLP, LayerNorm, Identity, trunc_normal
from .gradcheck import GradcheckResult, check_gradient, check_parameter_gradients, relative_error
from . import ops

__all__ = ['Tensor', 'Parameter', 'as_tensor', 'resolve_dtype', 'Tape', 'active_tape',
           'Module', 'ModuleDict', 'ModuleList', 'ParameterList', 'Linear', 'MLP', 'LayerNorm',
           'Identity', 'trunc_normal', 'GradcheckResult', 'check_gradient',
           'check_parameter_gradients', 'relative_error', 'ops']
