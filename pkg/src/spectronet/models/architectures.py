"""Network building blocks and the SB-CNN / ResNet / DenseNet bodies.

Spectrogram batches are [N, 1, frames, mels]: time runs down the height axis
and mel bands across the width axis.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..autograd import ops
from ..autograd.tensor import Tensor
from .layers import AvgPool2d, BatchNorm2d, Conv2d, GlobalPool, Linear, MaxPool2d, Module, ReLU, Sequential

ADAPTER_DILATIONS = (1, 2, 3, 4)


class MultiscaleAdapter(Module):
    """Parallel 3x3 convolutions at dilations 1-4, stacked along channels.

    Each branch pads by its dilation so every branch keeps the input's
    height and width. Output channels are ``4 * per_branch_channels`` in
    ascending-dilation order; no nonlinearity is applied before stacking.
    """

    def __init__(self, in_channels: int = 1, per_branch_channels: int = 8, *, rng: np.random.Generator) -> None:
        super().__init__()
        self.in_channels = in_channels
        self.per_branch_channels = per_branch_channels
        self.branches = Sequential(
            *(
                Conv2d(in_channels, per_branch_channels, 3, padding=d, dilation=d, rng=rng)
                for d in ADAPTER_DILATIONS
            )
        )

    @property
    def out_channels(self) -> int:
        return len(ADAPTER_DILATIONS) * self.per_branch_channels

    def forward(self, x: Tensor) -> Tensor:
        if x.ndim != 4 or x.shape[1] != self.in_channels:
            raise ValueError(f"adapter expects [N, {self.in_channels}, H, W], got {x.shape}")
        return ops.channel_concat([branch(x) for branch in self.branches])


# ---------------------------------------------------------------------------
# ResNet
# ---------------------------------------------------------------------------


class BasicBlock(Module):
    """Pre-activation residual block: ``out = F(x) + shortcut(x)``.

    ``F`` is bn-relu-conv3x3-bn-relu-conv3x3. The shortcut is the identity, or a
    strided 1x1 projection when stride or channel count changes.
    """

    expansion = 1

    def __init__(self, in_ch: int, width: int, stride: int = 1, *, rng) -> None:
        super().__init__()
        out_ch = width * self.expansion
        self.bn1 = BatchNorm2d(in_ch)
        self.conv1 = Conv2d(in_ch, width, 3, stride=stride, padding=1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(width)
        self.conv2 = Conv2d(width, out_ch, 3, padding=1, bias=False, rng=rng)
        self.shortcut = (
            Conv2d(in_ch, out_ch, 1, stride=stride, bias=False, rng=rng) if stride != 1 or in_ch != out_ch else None
        )
        self.out_channels = out_ch

    def residual(self, x: Tensor) -> Tensor:
        h = self.conv1(ops.relu(self.bn1(x)))
        return self.conv2(ops.relu(self.bn2(h)))

    def forward(self, x: Tensor) -> Tensor:
        skip = x if self.shortcut is None else self.shortcut(x)
        return self.residual(x) + skip


class Bottleneck(BasicBlock):
    """Pre-activation bottleneck: 1x1 reduce, 3x3, 1x1 expand (x4)."""

    expansion = 4

    def __init__(self, in_ch: int, width: int, stride: int = 1, *, rng) -> None:
        Module.__init__(self)
        out_ch = width * self.expansion
        self.bn1 = BatchNorm2d(in_ch)
        self.conv1 = Conv2d(in_ch, width, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(width)
        self.conv2 = Conv2d(width, width, 3, stride=stride, padding=1, bias=False, rng=rng)
        self.bn3 = BatchNorm2d(width)
        self.conv3 = Conv2d(width, out_ch, 1, bias=False, rng=rng)
        self.shortcut = (
            Conv2d(in_ch, out_ch, 1, stride=stride, bias=False, rng=rng) if stride != 1 or in_ch != out_ch else None
        )
        self.out_channels = out_ch

    def residual(self, x: Tensor) -> Tensor:
        h = self.conv1(ops.relu(self.bn1(x)))
        h = self.conv2(ops.relu(self.bn2(h)))
        return self.conv3(ops.relu(self.bn3(h)))


def residual_block(x: Tensor, block: BasicBlock) -> Tensor:
    return block(x)


def _stem(in_ch: int, out_ch: int, large: bool, rng) -> list[Module]:
    if large:
        return [
            Conv2d(in_ch, out_ch, 7, stride=2, padding=3, bias=False, rng=rng),
            BatchNorm2d(out_ch),
            ReLU(),
            MaxPool2d(3, 2, 1),
        ]
    return [Conv2d(in_ch, out_ch, 3, padding=1, bias=False, rng=rng), BatchNorm2d(out_ch), ReLU()]


def resnet_body(
    in_ch: int,
    block: type[BasicBlock],
    stage_blocks: Sequence[int],
    base_width: int,
    large_stem: bool,
    pool_kind: str,
    rng,
) -> tuple[Sequential, int]:
    layers: list[Module] = _stem(in_ch, base_width, large_stem, rng)
    ch = base_width
    for s, n_blocks in enumerate(stage_blocks):
        width = base_width * 2**s
        blocks = []
        for b in range(n_blocks):
            blk = block(ch, width, 2 if (s > 0 and b == 0) else 1, rng=rng)
            ch = blk.out_channels
            blocks.append(blk)
        layers.append(Sequential(*blocks))
    layers += [BatchNorm2d(ch), ReLU(), GlobalPool(pool_kind)]
    return Sequential(*layers), ch


# ---------------------------------------------------------------------------
# DenseNet
# ---------------------------------------------------------------------------


class DenseLayer(Module):
    """bn-relu-conv1x1(bn_size * growth)-bn-relu-conv3x3(growth)."""

    def __init__(self, in_ch: int, growth: int, bn_size: int = 4, *, rng) -> None:
        super().__init__()
        self.bn1 = BatchNorm2d(in_ch)
        self.conv1 = Conv2d(in_ch, bn_size * growth, 1, bias=False, rng=rng)
        self.bn2 = BatchNorm2d(bn_size * growth)
        self.conv2 = Conv2d(bn_size * growth, growth, 3, padding=1, bias=False, rng=rng)

    def forward(self, x: Tensor) -> Tensor:
        h = self.conv1(ops.relu(self.bn1(x)))
        return self.conv2(ops.relu(self.bn2(h)))


class DenseBlock(Module):
    """Layer ``l`` sees the concatenation of the block input and every earlier layer's output."""

    def __init__(self, in_ch: int, n_layers: int, growth: int, bn_size: int = 4, *, rng) -> None:
        super().__init__()
        self.layers = Sequential(
            *(DenseLayer(in_ch + i * growth, growth, bn_size, rng=rng) for i in range(n_layers))
        )
        self.out_channels = in_ch + n_layers * growth

    def forward(self, x: Tensor) -> Tensor:
        features = [x]
        for layer in self.layers:
            features.append(layer(ops.channel_concat(features)))
        return ops.channel_concat(features)


def dense_block(x: Tensor, block: DenseBlock) -> Tensor:
    return block(x)


class Transition(Module):
    def __init__(self, in_ch: int, out_ch: int, *, rng) -> None:
        super().__init__()
        self.bn = BatchNorm2d(in_ch)
        self.conv = Conv2d(in_ch, out_ch, 1, bias=False, rng=rng)
        self.pool = AvgPool2d(2, 2)

    def forward(self, x: Tensor) -> Tensor:
        return self.pool(self.conv(ops.relu(self.bn(x))))


def densenet_body(
    in_ch: int,
    growth: int,
    stage_layers: Sequence[int],
    init_features: int,
    large_stem: bool,
    pool_kind: str,
    rng,
    bn_size: int = 4,
    compression: float = 0.5,
) -> tuple[Sequential, int]:
    layers: list[Module] = _stem(in_ch, init_features, large_stem, rng)
    ch = init_features
    for s, n in enumerate(stage_layers):
        blk = DenseBlock(ch, n, growth, bn_size, rng=rng)
        layers.append(blk)
        ch = blk.out_channels
        if s != len(stage_layers) - 1:
            out = int(ch * compression)
            layers.append(Transition(ch, out, rng=rng))
            ch = out
    layers += [BatchNorm2d(ch), ReLU(), GlobalPool(pool_kind)]
    return Sequential(*layers), ch


# ---------------------------------------------------------------------------
# SB-CNN
# ---------------------------------------------------------------------------


def sbcnn_body(in_ch: int, pool_kind: str, rng) -> tuple[Sequential, int]:
    """Three 5x5 conv layers (24, 48, 48 filters) with 4x2 max-pools after the
    first two; the third layer's output is pooled over its full extent,
    flattened, and passed through a 64-unit hidden affine layer."""
    body = Sequential(
        Conv2d(in_ch, 24, 5, padding=2, rng=rng),
        ReLU(),
        MaxPool2d((4, 2)),
        Conv2d(24, 48, 5, padding=2, rng=rng),
        ReLU(),
        MaxPool2d((4, 2)),
        Conv2d(48, 48, 5, padding=2, rng=rng),
        ReLU(),
        GlobalPool(pool_kind),
        Linear(48, 64, rng=rng),
        ReLU(),
    )
    return body, 64
