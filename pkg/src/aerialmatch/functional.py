"""Differentiable network operators built on :mod:`aerialmatch.tensor`."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeMismatch
from .tensor import Tensor, record


def _conv_windows(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # (N, C, H', W', kh, kw) view, no copy
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def _conv2d_backward(g, xdata, kdata, win, stride, pad, need_x, need_k):
    """Gradients of conv2d w.r.t. (input, kernel, bias)."""
    gb = g.sum(axis=(0, 2, 3))
    gk = np.tensordot(g, win, axes=([0, 2, 3], [0, 2, 3])) if need_k else None
    gx = None
    if need_x:
        n, c, h, w = xdata.shape
        _, _, kh, kw = kdata.shape
        ho, wo = g.shape[2], g.shape[3]
        gwin = np.tensordot(g, kdata, axes=([1], [0]))  # (N, H', W', C, kh, kw)
        gxp = np.zeros((n, c, h + 2 * pad, w + 2 * pad))
        for i in range(kh):
            for j in range(kw):
                gxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += gwin[
                    :, :, :, :, i, j
                ].transpose(0, 3, 1, 2)
        gx = gxp[:, :, pad : pad + h, pad : pad + w]
    return gx, gk, gb


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (N, C, H, W) with ``kernel`` (K, C, kh, kw)."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeMismatch(f"conv2d expects 4-d input and kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    if kc != c:
        raise ShapeMismatch(f"conv2d: input has {c} channels, kernel expects {kc}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeMismatch(f"conv2d: kernel extents must be odd, got {kh}x{kw}")
    if bias.shape != (k,):
        raise ShapeMismatch(f"conv2d: bias shape {bias.shape} != ({k},)")
    span_h, span_w = h + 2 * pad - kh, w + 2 * pad - kw
    if span_h < 0 or span_w < 0 or span_h % stride or span_w % stride:
        raise ShapeMismatch(f"conv2d: output size not integral for {h}x{w}, k={kh}, s={stride}, p={pad}")

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    win = _conv_windows(xp, kh, kw, stride)
    out = np.tensordot(win, kernel.data, axes=([1, 4, 5], [1, 2, 3]))  # (N, H', W', K)
    out = out.transpose(0, 3, 1, 2) + bias.data[None, :, None, None]

    def grads(g):
        return _conv2d_backward(
            g, x.data, kernel.data, win, stride, pad, x.requires_grad, kernel.requires_grad
        )

    return record(np.ascontiguousarray(out), (x, kernel, bias), grads, "conv2d")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return record(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def maxpool2(x: Tensor) -> Tensor:
    """2x2/stride-2 max pooling; ties route the gradient to the first (row-major) max."""
    if x.ndim != 4:
        raise ShapeMismatch(f"maxpool2 expects (N, C, H, W), got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise ShapeMismatch(f"maxpool2 needs even extents, got {h}x{w}")
    blocks = x.data.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
    arg = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, arg[..., None], axis=-1)[..., 0]

    def grads(g):
        gb = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(gb, arg[..., None], g[..., None], axis=-1)
        gb = gb.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return (gb.reshape(n, c, h, w),)

    return record(out, (x,), grads, "maxpool2")


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape
    scale = 1.0 / (h * w)

    def grads(g):
        return (np.broadcast_to(g[:, :, None, None] * scale, (n, c, h, w)).copy(),)

    return record(x.data.mean(axis=(2, 3)), (x,), grads, "global_avg_pool")


def linear(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    if x.ndim != 2 or w.ndim != 2 or x.shape[1] != w.shape[0] or b.shape != (w.shape[1],):
        raise ShapeMismatch(f"linear: x {x.shape}, w {w.shape}, b {b.shape}")

    def grads(g):
        return g @ w.data.T, x.data.T @ g, g.sum(axis=0)

    return record(x.data @ w.data + b.data, (x, w, b), grads, "linear")


def sigmoid(x: Tensor) -> Tensor:
    # tanh form is overflow-free and gives sigmoid(0) == 0.5 exactly
    s = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return record(s, (x,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def l2_normalize_channels(x: Tensor, eps: float = 1e-12) -> Tensor:
    """Divide each (n, :, h, w) fiber by sqrt(sum of squares + eps)."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    norm = np.sqrt(np.sum(x.data**2, axis=1, keepdims=True) + eps)
    y = x.data / norm

    def grads(g):
        return ((g - y * np.sum(g * y, axis=1, keepdims=True)) / norm,)

    return record(y, (x,), grads, "l2_normalize_channels")
