"""Small reverse-mode autodiff engine for convolutional nets on numpy arrays."""

from .checkpoint import load_checkpoint, save_checkpoint
from .nn import conv2d, conv_transpose2d, instance_norm, pad2d
from .optim import NonFiniteGradientError, ParamStore, adam_step
from .tensor import (
    GraphError,
    Tensor,
    add,
    add_scalar,
    backward,
    grad,
    l1_distance,
    leaky_relu,
    log,
    mean_log,
    mean_reduce,
    mean_square_to_const,
    mul,
    no_grad,
    relu,
    scalar_mul,
    sigmoid,
    square,
    square_distance,
    sub,
    sum_reduce,
    tanh,
)

__all__ = [
    "GraphError", "NonFiniteGradientError", "ParamStore", "Tensor", "add", "add_scalar",
    "adam_step", "backward", "conv2d", "conv_transpose2d", "grad", "instance_norm",
    "l1_distance", "leaky_relu", "load_checkpoint", "log", "mean_log", "mean_reduce",
    "mean_square_to_const", "mul", "no_grad", "pad2d", "relu", "save_checkpoint",
    "scalar_mul", "sigmoid", "square", "square_distance", "sub", "sum_reduce", "tanh",
]
