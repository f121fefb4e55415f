"""Differentiable building blocks on channels-last float64 arrays.

Every ``*_forward`` returns ``(out, cache)``; the matching ``*_backward``
takes the upstream gradient and that cache.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

KERNEL = 3
PAD = 1


def _im2col(x: np.ndarray, stride: int):
    b, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (PAD, PAD), (PAD, PAD), (0, 0)))
    win = sliding_window_view(xp, (KERNEL, KERNEL), axis=(1, 2))[:, ::stride, ::stride]
    ho, wo = win.shape[1], win.shape[2]
    cols = win.transpose(0, 1, 2, 4, 5, 3).reshape(b * ho * wo, KERNEL * KERNEL * c)
    return cols, ho, wo


def conv_forward(x, w, b, stride: int = 1):
    """3x3 convolution, zero padding 1. ``w`` has shape (3, 3, C_in, C_out)."""
    cols, ho, wo = _im2col(x, stride)
    out = cols @ w.reshape(-1, w.shape[-1])
    out += b
    return out.reshape(x.shape[0], ho, wo, w.shape[-1]), (x.shape, cols, w, stride)


def conv_backward(dout, cache, need_dx: bool = True):
    x_shape, cols, w, stride = cache
    bsz, h, wd, c = x_shape
    ho, wo, co = dout.shape[1:]
    d = dout.reshape(-1, co)
    dw = (cols.T @ d).reshape(w.shape)
    db = d.sum(axis=0)
    if not need_dx:
        return None, dw, db
    if stride == 1:
        # correlation with the flipped, transposed kernel
        wf = w[::-1, ::-1].transpose(0, 1, 3, 2).reshape(-1, c)
        dcols, _, _ = _im2col(dout, 1)
        return (dcols @ wf).reshape(x_shape), dw, db
    # one contiguous matmul per tap beats scattering a strided im2col gradient
    dxp = np.zeros((bsz, h + 2 * PAD, wd + 2 * PAD, c))
    for i in range(KERNEL):
        for j in range(KERNEL):
            tap = (d @ w[i, j].T).reshape(bsz, ho, wo, c)
            dxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += tap
    return dxp[:, PAD:-PAD, PAD:-PAD], dw, db


def relu_forward(x):
    out = np.maximum(x, 0.0)
    return out, out > 0


def relu_backward(dout, cache):
    return dout * cache


def residual_forward(h, w, b):
    """``relu(h + conv(h))`` with a stride-1 convolution."""
    z, conv_cache = conv_forward(h, w, b, 1)
    z += h
    out, mask = relu_forward(z)
    return out, (conv_cache, mask)


def residual_backward(dout, cache):
    conv_cache, mask = cache
    dz = relu_backward(dout, mask)
    dh, dw, db = conv_backward(dz, conv_cache)
    dh += dz
    return dh, dw, db


def dense_forward(x, w, b):
    return x @ w + b, x


def dense_backward(dout, cache, w):
    x = cache
    return dout @ w.T, x.T @ dout, dout.sum(axis=0)


def dropout_mask(shape, p: float, rng: np.random.Generator) -> np.ndarray:
    """Inverted-dropout mask: kept units are scaled by 1 / (1 - p)."""
    if p <= 0.0:
        return np.ones(shape)
    keep = rng.random(shape) >= p
    return keep / (1.0 - p)


def dropout_forward(x, mask):
    return x * mask, mask


def dropout_backward(dout, mask):
    return dout * mask


def mse_loss(pred, target):
    """Mean over all components of the squared error, and its gradient."""
    diff = pred - target
    n = diff.size
    return float(np.sum(diff * diff) / n), 2.0 * diff / n
