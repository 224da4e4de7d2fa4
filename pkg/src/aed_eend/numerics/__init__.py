"""Minimal dense tensor engine: reverse-mode autodiff and a Jacobi eigensolver."""

from .eig import BACKEND, sym_eig
from .tensor import (
    Tape,
    Tensor,
    active_tape,
    add,
    add_row,
    add_scalar,
    backward,
    clamp,
    concat_cols,
    concat_rows,
    dropout,
    elementwise,
    get_dtype,
    layer_norm,
    log,
    matmul,
    mean_all,
    mean_rows,
    mul,
    relu,
    scale,
    set_precision,
    sigmoid,
    slice_cols,
    softmax_rows,
    sub,
    sum_all,
    take_rows,
    tensor,
    transpose,
    zeros,
)

__all__ = [
    "BACKEND", "Tape", "Tensor", "active_tape", "add", "add_row", "add_scalar",
    "backward", "clamp", "concat_cols", "concat_rows", "dropout", "elementwise",
    "get_dtype", "layer_norm", "log", "matmul", "mean_all", "mean_rows", "mul",
    "relu", "scale", "set_precision", "sigmoid", "slice_cols", "softmax_rows",
    "sub", "sum_all", "take_rows", "tensor", "transpose", "zeros", "sym_eig",
]
