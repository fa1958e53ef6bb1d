"""Minimal dense-tensor library with reverse-mode autodiff."""
from .gradcheck import GradCheckResult, finite_diff_check
from .ops import affine, conv1d, dropout, dropout_seed, einsum2, layer_norm_core, matmul, sinusoidal_positions, softmax
from .optim import AdamState, adam_step, clip_grad_norm, noam_lr
from .tensor import (
    Tensor,
    absolute,
    as_tensor,
    concat,
    exp,
    grad_enabled,
    leaky_relu,
    log,
    no_grad,
    relu,
    sqrt,
    take_rows,
)

__all__ = [
    "AdamState", "GradCheckResult", "Tensor", "absolute", "adam_step", "as_tensor", "clip_grad_norm",
    "concat", "conv1d", "dropout", "dropout_seed", "einsum2", "exp", "finite_diff_check", "grad_enabled",
    "affine", "layer_norm_core", "leaky_relu", "log", "matmul", "no_grad", "noam_lr", "relu", "sinusoidal_positions",
    "softmax", "sqrt", "take_rows",
]
