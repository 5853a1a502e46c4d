"""Minimal dense-tensor library: autodiff, U-Net layer kernels, optimizers."""

from .tensor import (
    Tensor,
    as_tensor,
    add,
    mul,
    div,
    exp,
    log,
    sqrt,
    power,
    sigmoid,
    silu,
    reshape,
    transpose,
    getitem,
    concat,
    pad_axis,
    repeat_axis,
    reduce_sum,
    reduce_mean,
    matmul,
    softmax,
    conv1d,
    precision,
    no_grad,
    default_dtype,
    set_nan_checks,
)
from .layers import (
    Dense,
    Conv1d,
    GroupNorm,
    LayerNorm,
    AttentionBlock,
    CombineEmbedding,
    multi_head_attention,
    fan_in_uniform,
)
from .optim import ParamStore, adam_step, cosine_lr, ema_update
from .checkpoint import CheckpointError, save_checkpoint, load_checkpoint
from .gradcheck import GradCheckError, grad_check
