"""Minimal dense tensors with reverse-mode differentiation."""

from . import ops
from .gradcheck import gradcheck, numerical_grad
from .nn import Module, Parameter, trunc_normal
from .tensor import (
    Tensor,
    as_tensor,
    get_default_dtype,
    is_grad_enabled,
    make_result,
    no_grad,
    precision,
    set_debug,
    set_default_dtype,
)

__all__ = [
    "Module",
    "Parameter",
    "Tensor",
    "as_tensor",
    "get_default_dtype",
    "gradcheck",
    "is_grad_enabled",
    "make_result",
    "no_grad",
    "numerical_grad",
    "ops",
    "precision",
    "set_debug",
    "set_default_dtype",
    "trunc_normal",
]
