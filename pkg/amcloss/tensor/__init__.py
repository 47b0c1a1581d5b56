"""
Dense tensors with reverse-mode automatic differentiation.

It covers the layers of the two convolutional architectures and the
operations the losses need.
"""
from ._base import Function, Operand, Parameter, Tape, TapeNode, Tensor, backward
from ._basic import add, pick, scale, take_rows, total
from ._layers import (
    BatchNormState,
    batch_norm,
    conv2d,
    dense,
    dropout,
    gaussian_noise,
    global_avg_pool,
    leaky_relu,
    maxpool2x2,
    softmax,
    softmax_array,
)

__all__ = [
    # Base types
    "Function",
    "Operand",
    "Parameter",
    "Tape",
    "TapeNode",
    "Tensor",
    "backward",
    # Helpers
    "add",
    "pick",
    "scale",
    "take_rows",
    "total",
    # Layers
    "BatchNormState",
    "batch_norm",
    "conv2d",
    "dense",
    "dropout",
    "gaussian_noise",
    "global_avg_pool",
    "leaky_relu",
    "maxpool2x2",
    "softmax",
    "softmax_array",
]
