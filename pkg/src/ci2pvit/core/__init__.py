"""Numeric substrate: tensors, autodiff, parameters, optimizer, RNG."""

from .functional import (activation, conv2d, conv_transpose2d, cross_entropy, gelu,
                         layernorm, linear, log_softmax, relu6, softmax)
from .gradcheck import grad_check, numerical_grad
from .params import ParamEntry, ParamStore, adam_step, kaiming_uniform, trunc_normal
from .rng import Rng
from .tensor import (Tensor, absolute, backward, clamp, exp, flip, get_default_dtype, log,
                     matmul, no_grad, precision, set_default_dtype, sigmoid, sqrt)

__all__ = [
    "Tensor", "ParamStore", "ParamEntry", "Rng",
    "matmul", "conv2d", "conv_transpose2d", "activation", "gelu", "relu6", "layernorm",
    "softmax", "log_softmax", "cross_entropy", "linear", "sigmoid", "clamp", "exp", "log",
    "sqrt", "absolute", "flip", "backward", "adam_step", "grad_check", "numerical_grad",
    "no_grad", "precision", "get_default_dtype", "set_default_dtype",
    "trunc_normal", "kaiming_uniform",
]
