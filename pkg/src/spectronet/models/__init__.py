"""Spectrogram classifiers: multiscale adapter, SB-CNN, ResNet and DenseNet."""

from .architectures import (
    BasicBlock,
    Bottleneck,
    DenseBlock,
    DenseLayer,
    MultiscaleAdapter,
    dense_block,
    residual_block,
)
from .layers import BatchNorm2d, Conv2d, GlobalPool, Linear, Module, Sequential
from .zoo import (
    DENSENET_PRESETS,
    RESNET_PRESETS,
    Model,
    ModelSpec,
    ModelSpecError,
    body_state,
    build_model,
    forward_classify,
    load_model,
    parameter_checksum,
    replace_head,
    save_model,
)

__all__ = [
    "BasicBlock",
    "BatchNorm2d",
    "Bottleneck",
    "Conv2d",
    "DENSENET_PRESETS",
    "DenseBlock",
    "DenseLayer",
    "GlobalPool",
    "Linear",
    "Model",
    "ModelSpec",
    "ModelSpecError",
    "Module",
    "MultiscaleAdapter",
    "RESNET_PRESETS",
    "Sequential",
    "body_state",
    "build_model",
    "dense_block",
    "forward_classify",
    "load_model",
    "parameter_checksum",
    "replace_head",
    "residual_block",
    "save_model",
]
