"""Tensor core with reverse-mode differentiation."""
from .gradcheck import grad_check, tape_gradients
from .kernels import BACKEND
from .tensor import (
    NumericalError,
    SparseMatrix,
    Tape,
    Tensor,
    add,
    cross_entropy,
    detach,
    dropout,
    kl_div,
    log_softmax_rows,
    matmul,
    relu,
    scale,
    spmm,
)

__all__ = [
    "BACKEND",
    "NumericalError",
    "SparseMatrix",
    "Tape",
    "Tensor",
    "add",
    "cross_entropy",
    "detach",
    "dropout",
    "grad_check",
    "kl_div",
    "log_softmax_rows",
    "matmul",
    "relu",
    "scale",
    "spmm",
    "tape_gradients",
]
