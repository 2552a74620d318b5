"""Dilated 2-D convolution kernels on raw numpy arrays.

Layout is NCHW for activations and [C_out, C_in, k_h, k_w] for weights.
Convolution is cross-correlation (no kernel flip)::

    Y[n, o, m, q] = sum_{c, i, j} W[o, c, i, j] * X[n, c, m*s_h + i*d - p_h, q*s_w + j*d - p_w]

with out-of-range X read as zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import as_strided


def _pair(v) -> tuple[int, int]:
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


@dataclass(frozen=True)
class ConvGeometry:
    kernel: tuple[int, int] = (3, 3)
    stride: tuple[int, int] = (1, 1)
    padding: tuple[int, int] = (0, 0)
    dilation: int = 1

    def __post_init__(self) -> None:
        object.__setattr__(self, "kernel", _pair(self.kernel))
        object.__setattr__(self, "stride", _pair(self.stride))
        object.__setattr__(self, "padding", _pair(self.padding))
        object.__setattr__(self, "dilation", int(self.dilation))
        if min(self.kernel) < 1 or min(self.stride) < 1 or self.dilation < 1:
            raise ValueError(f"kernel, stride and dilation must be >= 1: {self}")
        if min(self.padding) < 0:
            raise ValueError(f"padding must be >= 0: {self}")

    @classmethod
    def same(cls, kernel: int = 3, dilation: int = 1) -> "ConvGeometry":
        """Stride-1 geometry whose output matches the input size (odd kernels)."""
        return cls((kernel, kernel), (1, 1), (dilation * (kernel - 1) // 2,) * 2, dilation)

    def output_size(self, h: int, w: int) -> tuple[int, int]:
        d = self.dilation
        (kh, kw), (sh, sw), (ph, pw) = self.kernel, self.stride, self.padding
        return (h + 2 * ph - d * (kh - 1) - 1) // sh + 1, (w + 2 * pw - d * (kw - 1) - 1) // sw + 1


class ConvShapeError(ValueError):
    pass


def check_shapes(x_shape, w_shape, geom: ConvGeometry) -> tuple[int, int]:
    if len(x_shape) != 4 or len(w_shape) != 4:
        raise ConvShapeError(f"conv2d expects 4-D input and weight, got {x_shape} and {w_shape}")
    if x_shape[1] != w_shape[1]:
        raise ConvShapeError(f"input has {x_shape[1]} channels, weight expects {w_shape[1]}")
    if tuple(w_shape[2:]) != geom.kernel:
        raise ConvShapeError(f"weight kernel {tuple(w_shape[2:])} does not match geometry {geom.kernel}")
    ho, wo = geom.output_size(x_shape[2], x_shape[3])
    if ho < 1 or wo < 1:
        raise ConvShapeError(f"degenerate output size {ho}x{wo} for input {x_shape[2:]} and {geom}")
    return ho, wo


def _padded(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    ph, pw = geom.padding
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def im2col(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    """Patch view of shape [C, k_h, k_w, N, H', W'] over the padded input (no copy).

    Reshaped to [C*k_h*k_w, N*H'*W'] it is the patch matrix whose product with
    the flattened weight gives every output position at once.
    """
    ho, wo = geom.output_size(x.shape[2], x.shape[3])
    xp = _padded(x, geom)
    n, c = xp.shape[:2]
    sn, sc, sh, sw = xp.strides
    (kh, kw), (sth, stw), d = geom.kernel, geom.stride, geom.dilation
    return as_strided(
        xp,
        shape=(c, kh, kw, n, ho, wo),
        strides=(sc, sh * d, sw * d, sn, sh * sth, sw * stw),
        writeable=False,
    )


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, geom: ConvGeometry):
    """Patch-unrolled convolution. Returns (output, patch_matrix) for reuse in backward."""
    ho, wo = check_shapes(x.shape, w.shape, geom)
    n, c_out = x.shape[0], w.shape[0]
    cols = im2col(x, geom).reshape(-1, n * ho * wo)
    out = w.reshape(c_out, -1) @ cols
    if b is not None:
        out += b[:, None]
    out = out.reshape(c_out, n, ho, wo).transpose(1, 0, 2, 3)
    return np.ascontiguousarray(out), cols


def conv2d_backward(grad: np.ndarray, x_shape, w: np.ndarray, cols: np.ndarray, geom: ConvGeometry, need_input: bool = True):
    """Gradients (d_input, d_weight, d_bias) given the upstream gradient [N, C_out, H', W'].

    ``d_input`` is None when ``need_input`` is false.
    """
    n, c, h, wd = x_shape
    c_out = w.shape[0]
    ho, wo = grad.shape[2:]
    g2 = np.ascontiguousarray(grad.transpose(1, 0, 2, 3)).reshape(c_out, -1)
    d_w = (g2 @ cols.T).reshape(w.shape)
    d_b = g2.sum(axis=1)
    if not need_input:
        return None, d_w, d_b

    (kh, kw), (sth, stw), d = geom.kernel, geom.stride, geom.dilation
    ph, pw = geom.padding
    d_cols = (w.reshape(c_out, -1).T @ g2).reshape(c, kh, kw, n, ho, wo)
    if (kh, kw, sth, stw, ph, pw) == (1, 1, 1, 1, 0, 0):
        return np.ascontiguousarray(d_cols[:, 0, 0].transpose(1, 0, 2, 3)), d_w, d_b
    d_xp = np.zeros((c, n, h + 2 * ph, wd + 2 * pw), dtype=grad.dtype)
    for i in range(kh):
        r0 = i * d
        for j in range(kw):
            c0 = j * d
            d_xp[:, :, r0 : r0 + sth * (ho - 1) + 1 : sth, c0 : c0 + stw * (wo - 1) + 1 : stw] += d_cols[:, i, j]
    d_x = d_xp[:, :, ph : ph + h, pw : pw + wd].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(d_x), d_w, d_b


def conv2d_direct(x: np.ndarray, w: np.ndarray, b: np.ndarray | None, geom: ConvGeometry) -> np.ndarray:
    """Tap-by-tap loop over the kernel; slow but transparent."""
    ho, wo = check_shapes(x.shape, w.shape, geom)
    xp = _padded(x, geom)
    (kh, kw), (sth, stw), d = geom.kernel, geom.stride, geom.dilation
    out = np.zeros((x.shape[0], w.shape[0], ho, wo), dtype=np.result_type(x, w))
    for i in range(kh):
        for j in range(kw):
            patch = xp[:, :, i * d : i * d + sth * (ho - 1) + 1 : sth, j * d : j * d + stw * (wo - 1) + 1 : stw]
            out += np.einsum("nchw,oc->nohw", patch, w[:, :, i, j])
    if b is not None:
        out += b[None, :, None, None]
    return out
