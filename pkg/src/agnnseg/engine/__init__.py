"""Differentiable tensor engine: tape-recorded ops with exact gradients."""

from .gradcheck import GradCheckReport, central_difference, grad_check
from .ops import (
    add,
    apply,
    backward,
    channel_broadcast_mul,
    concat_channels,
    conv2d,
    global_avg_pool,
    matmul,
    mul,
    op_kinds,
    relu,
    replay,
    reshape,
    row_softmax,
    scalar_scale,
    sigmoid,
    tanh,
    transpose,
    weighted_bce,
)
from .tensor import (
    GradientMap,
    NonFiniteError,
    Tape,
    Tensor,
    active_tape,
    config,
    suspend_taping,
)

__all__ = [
    "GradCheckReport",
    "GradientMap",
    "NonFiniteError",
    "Tape",
    "Tensor",
    "active_tape",
    "add",
    "apply",
    "backward",
    "central_difference",
    "channel_broadcast_mul",
    "concat_channels",
    "config",
    "conv2d",
    "global_avg_pool",
    "grad_check",
    "matmul",
    "mul",
    "op_kinds",
    "relu",
    "replay",
    "reshape",
    "row_softmax",
    "scalar_scale",
    "sigmoid",
    "suspend_taping",
    "tanh",
    "transpose",
    "weighted_bce",
]
