"""Differentiable layer primitives over :class:`Tensor`."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import as_strided

from .conv import ConvGeometry, _pair, conv2d_backward, conv2d_forward
from .tensor import Tensor


def conv2d(x: Tensor, weight: Tensor, bias: Tensor | None = None, geom: ConvGeometry = ConvGeometry()) -> Tensor:
    out, cols = conv2d_forward(x.data, weight.data, None if bias is None else bias.data, geom)
    x_shape, w, need_input = x.shape, weight.data, x.requires_grad

    def back(g):
        d_x, d_w, d_b = conv2d_backward(g, x_shape, w, cols, geom, need_input)
        return (d_x, d_w) if bias is None else (d_x, d_w, d_b)

    parents = (x, weight) if bias is None else (x, weight, bias)
    return Tensor.from_op(out, parents, back, "conv2d")


def _windows(xp: np.ndarray, kernel, stride, out_hw) -> np.ndarray:
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    return as_strided(
        xp,
        shape=(n, c, out_hw[0], out_hw[1], kernel[0], kernel[1]),
        strides=(sn, sc, sh * stride[0], sw * stride[1], sh, sw),
        writeable=False,
    )


def _pool_geometry(shape, window, stride, padding):
    window, stride, padding = _pair(window), _pair(stride or window), _pair(padding)
    h, w = shape[2] + 2 * padding[0], shape[3] + 2 * padding[1]
    if window[0] > h or window[1] > w:
        raise ValueError(f"pool window {window} larger than padded input {(h, w)}")
    out = ((h - window[0]) // stride[0] + 1, (w - window[1]) // stride[1] + 1)
    return window, stride, padding, out


def _scatter_windows(grad_windows: np.ndarray, padded_shape, window, stride, out_hw, dtype):
    """Sum window-shaped gradients back onto the padded input grid."""
    d_xp = np.zeros(padded_shape, dtype=dtype)
    ho, wo = out_hw
    for i in range(window[0]):
        for j in range(window[1]):
            d_xp[:, :, i : i + stride[0] * (ho - 1) + 1 : stride[0], j : j + stride[1] * (wo - 1) + 1 : stride[1]] += (
                grad_windows[..., i, j]
            )
    return d_xp


def max_pool2d(x: Tensor, window, stride=None, padding=0) -> Tensor:
    """Max over windows; ties send the gradient to the first maximum in row-major order."""
    window, stride, padding, out_hw = _pool_geometry(x.shape, window, stride, padding)
    ph, pw = padding
    xp = x.data
    if ph or pw:
        xp = np.pad(xp, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=-np.inf)
    win = _windows(xp, window, stride, out_hw)
    flat = win.reshape(win.shape[:4] + (-1,))
    arg = flat.argmax(axis=-1)
    out = np.take_along_axis(flat, arg[..., None], axis=-1)[..., 0]
    x_shape, xp_shape, dtype = x.shape, xp.shape, x.dtype

    def back(g):
        gw = np.zeros(flat.shape, dtype=dtype)
        np.put_along_axis(gw, arg[..., None], g[..., None], axis=-1)
        gw = gw.reshape(win.shape)
        d_xp = _scatter_windows(gw, xp_shape, window, stride, out_hw, dtype)
        return (d_xp[:, :, ph : ph + x_shape[2], pw : pw + x_shape[3]],)

    return Tensor.from_op(np.ascontiguousarray(out), (x,), back, "max_pool2d")


def avg_pool2d(x: Tensor, window, stride=None) -> Tensor:
    window, stride, _, out_hw = _pool_geometry(x.shape, window, stride, 0)
    win = _windows(x.data, window, stride, out_hw)
    area = window[0] * window[1]
    x_shape, dtype = x.shape, x.dtype

    def back(g):
        gw = np.broadcast_to((g / area)[..., None, None], win.shape)
        return (_scatter_windows(gw, x_shape, window, stride, out_hw, dtype),)

    return Tensor.from_op(win.mean(axis=(-2, -1)).astype(dtype), (x,), back, "avg_pool2d")


def global_pool(x: Tensor, kind: str = "avg") -> Tensor:
    """Pool over the full spatial extent, whatever its size: [N, C, H, W] -> [N, C, 1, 1]."""
    if x.ndim != 4 or x.shape[2] < 1 or x.shape[3] < 1:
        raise ValueError(f"global_pool expects [N, C, H, W] with H, W >= 1, got {x.shape}")
    n, c, h, w = x.shape
    if kind == "avg":
        out = x.data.mean(axis=(2, 3), keepdims=True)

        def back(g):
            return (np.broadcast_to(g / (h * w), x.shape).copy(),)

    elif kind == "max":
        flat = x.data.reshape(n, c, h * w)
        arg = flat.argmax(axis=-1)
        out = np.take_along_axis(flat, arg[..., None], axis=-1).reshape(n, c, 1, 1)

        def back(g):
            d = np.zeros((n, c, h * w), dtype=x.dtype)
            np.put_along_axis(d, arg[..., None], g.reshape(n, c, 1), axis=-1)
            return (d.reshape(x.shape),)

    else:
        raise ValueError(f"unknown pool kind {kind!r}")
    return Tensor.from_op(out.astype(x.dtype), (x,), back, f"global_{kind}_pool")


@dataclass
class BatchNormState:
    """Affine parameters plus running statistics for one batch-norm layer."""

    gamma: Tensor
    beta: Tensor
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5

    @classmethod
    def create(cls, channels: int, dtype=np.float32, momentum: float = 0.1, eps: float = 1e-5) -> "BatchNormState":
        from .tensor import Parameter

        return cls(
            gamma=Parameter(np.ones(channels, dtype=dtype)),
            beta=Parameter(np.zeros(channels, dtype=dtype)),
            running_mean=np.zeros(channels, dtype=dtype),
            running_var=np.ones(channels, dtype=dtype),
            momentum=momentum,
            eps=eps,
        )


def batch_norm2d(x: Tensor, state: BatchNormState, mode: str = "train") -> Tensor:
    """Per-channel normalization.

    Train mode normalizes with the biased batch variance and folds the unbiased
    variance into the running estimate: ``r <- (1 - momentum) * r + momentum * batch``.
    """
    if x.ndim != 4:
        raise ValueError(f"batch_norm2d expects [N, C, H, W], got {x.shape}")
    c = x.shape[1]
    if state.gamma.shape != (c,):
        raise ValueError(f"input has {c} channels, batch-norm state has {state.gamma.shape[0]}")
    if x.shape[0] == 0:
        raise ValueError("batch_norm2d on an empty batch")
    gamma, beta = state.gamma, state.beta
    shape = (1, c, 1, 1)

    if mode == "train":
        count = x.shape[0] * x.shape[2] * x.shape[3]
        mean = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        m = state.momentum
        unbiased = var * count / max(count - 1, 1)
        state.running_mean[...] = (1 - m) * state.running_mean + m * mean
        state.running_var[...] = (1 - m) * state.running_var + m * unbiased
    elif mode == "eval":
        count = None
        mean, var = state.running_mean, state.running_var
    else:
        raise ValueError(f"unknown batch-norm mode {mode!r}")

    inv_std = (1.0 / np.sqrt(var + state.eps)).astype(x.dtype)
    x_hat = (x.data - mean.reshape(shape)) * inv_std.reshape(shape)
    out = x_hat * gamma.data.reshape(shape) + beta.data.reshape(shape)
    g_data = gamma.data

    def back(g):
        d_gamma = (g * x_hat).sum(axis=(0, 2, 3))
        d_beta = g.sum(axis=(0, 2, 3))
        d_hat = g * g_data.reshape(shape)
        if count is None:
            d_x = d_hat * inv_std.reshape(shape)
        else:
            d_x = (
                inv_std.reshape(shape)
                / count
                * (
                    count * d_hat
                    - d_hat.sum(axis=(0, 2, 3), keepdims=True)
                    - x_hat * (d_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
                )
            )
        return d_x, d_gamma, d_beta

    return Tensor.from_op(out.astype(x.dtype), (x, gamma, beta), back, f"batch_norm_{mode}")


def affine(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with weight stored [in_features, out_features]."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[0]:
        raise ValueError(f"affine shape mismatch: input {x.shape}, weight {weight.shape}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ValueError(f"affine bias shape {bias.shape} != ({weight.shape[1]},)")
    out = x @ weight
    return out if bias is None else out + bias


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return Tensor.from_op(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def channel_concat(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ValueError("channel_concat needs at least one tensor")
    if len(tensors) == 1:
        return tensors[0]
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != 4 or t.shape[0] != ref[0] or t.shape[2:] != ref[2:]:
            raise ValueError(f"channel_concat shape mismatch: {ref} vs {t.shape}")
    bounds = np.cumsum([0] + [t.shape[1] for t in tensors])

    def back(g):
        return tuple(g[:, bounds[k] : bounds[k + 1]] for k in range(len(tensors)))

    return Tensor.from_op(np.concatenate([t.data for t in tensors], axis=1), tensors, back, "concat")


def log_softmax(logits: Tensor) -> Tensor:
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    out = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    soft = np.exp(out)
    return Tensor.from_op(out, (logits,), lambda g: (g - soft * g.sum(axis=1, keepdims=True),), "log_softmax")


def nll_loss(log_probs: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of the labelled class."""
    labels = np.asarray(labels, dtype=np.int64)
    n, k = log_probs.shape
    if labels.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= k):
        raise ValueError(f"labels must lie in [0, {k})")
    rows = np.arange(n)
    out = -log_probs.data[rows, labels].mean()

    def back(g):
        d = np.zeros_like(log_probs.data)
        d[rows, labels] = -g / n
        return (d,)

    return Tensor.from_op(np.asarray(out, dtype=log_probs.dtype), (log_probs,), back, "nll")


def cross_entropy_from_logits(logits: Tensor, labels) -> Tensor:
    if logits.ndim != 2:
        raise ValueError(f"logits must be [N, K], got {logits.shape}")
    return nll_loss(log_softmax(logits), labels)
