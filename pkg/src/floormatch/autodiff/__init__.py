"""Minimal reverse-mode autodiff over dense numpy arrays."""
from .tensor import Tensor, no_grad, parameter
from .ops import (
    add, batch_norm, batch_stats, concat, conv2d, cross_entropy, hinge, linear, maxpool2x2, mean_of, mul,
    pointwise, relu, reshape, scale, softmax_np, take_rows, tanh, total, weighted_mean,
)

__all__ = [
    "Tensor", "no_grad", "parameter", "add", "batch_norm", "batch_stats", "concat", "conv2d", "cross_entropy",
    "hinge", "linear", "maxpool2x2", "mean_of", "mul", "pointwise", "relu", "reshape",
    "scale", "softmax_np", "take_rows", "tanh", "total", "weighted_mean",
]
