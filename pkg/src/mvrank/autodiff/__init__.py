"""Minimal reverse-mode automatic differentiation."""

from . import kernels, ops
from .ops import (
    abs,
    add,
    bilinear_grid_sample,
    concat,
    constant,
    conv2d,
    maximum,
    maxpool2x2,
    mean,
    mse,
    mul,
    neg,
    relu,
    reshape,
    sub,
    sum,
)
from .optim import AdamState, adam_step
from .tensor import Gradients, ShapeError, Tape, Tensor, backward

__all__ = [
    "AdamState", "Gradients", "ShapeError", "Tape", "Tensor", "abs", "adam_step", "add",
    "backward", "bilinear_grid_sample", "concat", "constant", "conv2d", "kernels",
    "maximum", "maxpool2x2", "mean", "mse", "mul", "neg", "ops", "relu", "reshape",
    "sub", "sum",
]
