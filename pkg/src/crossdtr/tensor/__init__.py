"""Numeric core: tensors, autodiff tape, operations, optimizer, checkpoints."""

from .core import (
    Tape,
    Tensor,
    active_tape,
    backward,
    default_dtype,
    dtype_scope,
    set_default_dtype,
    zero_grads,
)
from .io import FORMAT_VERSION, MAGIC, load_checkpoint, save_checkpoint
from .ops import (
    AttentionProjections,
    absolute,
    add,
    clamp_min,
    concat,
    conv2d,
    div,
    exp,
    gelu,
    layer_norm,
    linear,
    log,
    matmul,
    mean,
    mul,
    multi_head_attention,
    neg,
    powc,
    relu,
    reshape,
    sigmoid,
    slice_axis,
    softmax,
    sub,
    sum_,
    transpose,
)
from .optim import AdamState, adamw_step

__all__ = [
    "AdamState",
    "AttentionProjections",
    "FORMAT_VERSION",
    "MAGIC",
    "Tape",
    "Tensor",
    "absolute",
    "active_tape",
    "adamw_step",
    "add",
    "backward",
    "clamp_min",
    "concat",
    "conv2d",
    "default_dtype",
    "div",
    "dtype_scope",
    "exp",
    "gelu",
    "layer_norm",
    "linear",
    "load_checkpoint",
    "log",
    "matmul",
    "mean",
    "mul",
    "multi_head_attention",
    "neg",
    "powc",
    "relu",
    "reshape",
    "save_checkpoint",
    "set_default_dtype",
    "sigmoid",
    "slice_axis",
    "softmax",
    "sub",
    "sum_",
    "transpose",
    "zero_grads",
]
