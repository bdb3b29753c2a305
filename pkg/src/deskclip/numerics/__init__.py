from .tensor import (
    Tensor,
    add,
    attention,
    assert_all_finite,
    clip,
    concat,
    constant,
    embedding,
    exp,
    gelu,
    index,
    l2_normalize,
    layer_norm,
    log,
    log_softmax,
    matmul,
    mean,
    mul,
    mul_scalar,
    parameter,
    power,
    reshape,
    softmax,
    sum_,
    take_along_last,
    tanh,
    transpose,
    transpose_last,
    zero_grads,
)
from .gradcheck import GradReport, grad_check

__all__ = [
    "Tensor",
    "add",
    "attention",
    "assert_all_finite",
    "clip",
    "concat",
    "constant",
    "embedding",
    "exp",
    "gelu",
    "index",
    "l2_normalize",
    "layer_norm",
    "log",
    "log_softmax",
    "matmul",
    "mean",
    "mul",
    "mul_scalar",
    "parameter",
    "power",
    "reshape",
    "softmax",
    "sum_",
    "take_along_last",
    "tanh",
    "transpose",
    "transpose_last",
    "zero_grads",
    "GradReport",
    "grad_check",
]
