"""Minimal reverse-mode autodiff over numpy arrays."""

from .checkpoint import CheckpointError, CheckpointMismatchError, load_checkpoint, save_checkpoint
from .conv import ConvGeometry, ConvShapeError, conv2d_direct
from .gradcheck import finite_difference_check
from .ops import (
    BatchNormState,
    affine,
    avg_pool2d,
    batch_norm2d,
    channel_concat,
    conv2d,
    cross_entropy_from_logits,
    global_pool,
    log_softmax,
    max_pool2d,
    nll_loss,
    relu,
)
from .tensor import Parameter, Tensor, no_grad

__all__ = [
    "BatchNormState",
    "CheckpointError",
    "CheckpointMismatchError",
    "ConvGeometry",
    "ConvShapeError",
    "Parameter",
    "Tensor",
    "affine",
    "avg_pool2d",
    "batch_norm2d",
    "channel_concat",
    "conv2d",
    "conv2d_direct",
    "cross_entropy_from_logits",
    "finite_difference_check",
    "global_pool",
    "load_checkpoint",
    "log_softmax",
    "max_pool2d",
    "nll_loss",
    "no_grad",
    "relu",
    "save_checkpoint",
]
