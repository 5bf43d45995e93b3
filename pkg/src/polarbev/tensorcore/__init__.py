"""Minimal dense tensors with a reverse-mode tape."""

from . import kinks
from .gradcheck import GradCheckReport, grad_check
from .ops import (
    abs_,
    add,
    avg_pool2d,
    bilinear_sample,
    broadcast_add,
    concat,
    conv2d,
    cross_entropy,
    div,
    matmul,
    mean,
    mul,
    normalize_channels,
    relu,
    reshape,
    scatter_rows,
    sigmoid,
    sparse_matmul,
    sub,
    sum_reduce,
    take_rows,
    transpose,
    upsample_nearest,
)
from .serialize import load_named, load_tensor, save_tensor
from .tensor import Tape, Tensor, active_tape, as_tensor

__all__ = [
    "GradCheckReport", "Tape", "Tensor", "abs_", "active_tape", "add", "as_tensor",
    "avg_pool2d", "bilinear_sample", "broadcast_add", "concat", "conv2d", "cross_entropy",
    "div", "grad_check", "kinks", "load_named", "load_tensor", "matmul", "mean", "mul",
    "normalize_channels", "relu", "reshape", "save_tensor", "scatter_rows", "sigmoid", "sparse_matmul",
    "sub", "sum_reduce", "take_rows", "transpose", "upsample_nearest",
]
