from .tensor import (
    ShapeError,
    Tensor,
    abs_,
    add,
    bce_with_logits,
    concat,
    conv2d,
    conv_transpose2d,
    cross_entropy,
    dropout,
    embedding_lookup,
    exp,
    gelu,
    getitem,
    grad_enabled,
    layernorm,
    log,
    matmul,
    mean,
    mul,
    no_grad,
    reciprocal,
    reshape,
    sigmoid,
    softmax,
    sum_,
    transpose,
)
from .optim import AdamW, clip_grad_norm, global_grad_norm

__all__ = [
    "ShapeError", "Tensor", "abs_", "add", "bce_with_logits", "concat",
    "conv2d", "conv_transpose2d", "cross_entropy", "dropout",
    "embedding_lookup", "exp", "gelu", "getitem", "grad_enabled",
    "layernorm", "log", "matmul", "mean", "mul", "no_grad", "reciprocal",
    "reshape", "sigmoid", "softmax", "sum_", "transpose",
    "AdamW", "clip_grad_norm", "global_grad_norm",
]
