"""Forward and backward passes for the layer kinds used by the age classifier.

Tensors are numpy arrays in channels-last layout: images are ``[N, H, W, C]``
batches (a single ``[H, W, C]`` image is accepted and treated as N = 1) and
convolution kernels are ``[K, K, C, F]``.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeMismatch


def _as_batch(x):
    x = np.asarray(x)
    if x.ndim == 3:
        return x[None], True
    if x.ndim != 4:
        raise ShapeMismatch(f"expected [N,H,W,C] or [H,W,C], got shape {x.shape}")
    return x, False


def conv_pad(kernel: int, padding: str) -> int:
    if padding == "same":
        return (kernel - 1) // 2
    if padding == "valid":
        return 0
    raise ValueError(f"unknown padding {padding!r}")


def im2col(x: np.ndarray, kernel: int) -> np.ndarray:
    """``[N, H, W, C]`` -> ``[N*Ho*Wo, K*K*C]`` with (kh, kw, c) column order."""
    n, h, w, c = x.shape
    win = sliding_window_view(x, (kernel, kernel), axis=(1, 2))  # N, Ho, Wo, C, K, K
    ho, wo = h - kernel + 1, w - kernel + 1
    return win.transpose(0, 1, 2, 4, 5, 3).reshape(n * ho * wo, kernel * kernel * c)


def conv2d_forward(x, weights, bias, padding: str = "valid"):
    """2-D cross-correlation (no kernel flip), stride 1.

    Returns ``(output, cache)``; the cache feeds :func:`conv2d_backward`.
    """
    xb, single = _as_batch(x)
    weights = np.asarray(weights)
    bias = np.asarray(bias)
    if weights.ndim != 4 or weights.shape[0] != weights.shape[1]:
        raise ShapeMismatch(f"kernel must be [K,K,C,F], got {weights.shape}")
    k, _, c, f = weights.shape
    if k % 2 == 0:
        raise ShapeMismatch("kernel size must be odd")
    if xb.shape[3] != c:
        raise ShapeMismatch(f"input has {xb.shape[3]} channels, kernel expects {c}")
    if bias.shape != (f,):
        raise ShapeMismatch(f"bias must have shape ({f},), got {bias.shape}")
    p = conv_pad(k, padding)
    if p:
        xb = np.pad(xb, ((0, 0), (p, p), (p, p), (0, 0)))
    n, hp, wp, _ = xb.shape
    ho, wo = hp - k + 1, wp - k + 1
    if ho < 1 or wo < 1:
        raise ShapeMismatch(f"input {xb.shape[1:3]} smaller than kernel {k}")
    cols = im2col(xb, k)
    out = (cols @ weights.reshape(-1, f) + bias).reshape(n, ho, wo, f)
    cache = (cols, weights, xb.shape, p, single)
    return (out[0] if single else out), cache


def conv2d_backward(grad_out, cache, need_input_grad: bool = True):
    """Exact gradients of :func:`conv2d_forward` w.r.t. input, weights and bias."""
    cols, weights, padded_shape, p, single = cache
    k, _, c, f = weights.shape
    n, hp, wp, _ = padded_shape
    ho, wo = hp - k + 1, wp - k + 1
    g = np.asarray(grad_out)
    if single:
        g = g[None]
    if g.shape != (n, ho, wo, f):
        raise ShapeMismatch(f"grad_out shape {g.shape} does not match forward output {(n, ho, wo, f)}")
    g2 = g.reshape(-1, f)
    grad_w = (cols.T @ g2).reshape(weights.shape)
    grad_b = g2.sum(axis=0)
    grad_x = None
    if need_input_grad:
        # one small matmul per kernel offset keeps every scatter-add contiguous
        gx = np.zeros(padded_shape, dtype=g2.dtype)
        for i in range(k):
            for j in range(k):
                gx[:, i:i + ho, j:j + wo, :] += (g2 @ weights[i, j].T).reshape(n, ho, wo, c)
        if p:
            gx = gx[:, p:-p, p:-p, :]
        grad_x = gx[0] if single else gx
    return grad_x, grad_w, grad_b


def maxpool_forward(x, size: int = 2, stride: int = 2):
    """Non-overlapping max pooling; ties resolve to the first element in row-major order."""
    if size != stride:
        raise ValueError("only non-overlapping pooling (size == stride) is supported")
    xb, single = _as_batch(x)
    n, h, w, c = xb.shape
    if h % size or w % size:
        raise ShapeMismatch(f"spatial dims {(h, w)} not divisible by pool size {size}")
    out = xb[:, ::size, ::size, :].copy()
    for i in range(size):
        for j in range(size):
            if i or j:
                np.maximum(out, xb[:, i::size, j::size, :], out=out)
    cache = (xb, out, size, single)
    return (out[0] if single else out), cache


def maxpool_backward(grad_out, cache):
    xb, out, size, single = cache
    g = np.asarray(grad_out)
    if single:
        g = g[None]
    if g.shape != out.shape:
        raise ShapeMismatch(f"grad_out shape {g.shape} does not match pooled output {out.shape}")
    gx = np.zeros(xb.shape, dtype=g.dtype)
    taken = np.zeros(out.shape, dtype=bool)
    # visit window offsets in row-major order so the first maximum wins ties
    for i in range(size):
        for j in range(size):
            hit = xb[:, i::size, j::size, :] == out
            hit &= ~taken
            taken |= hit
            gx[:, i::size, j::size, :] = g * hit
    return gx[0] if single else gx


def relu_forward(x):
    x = np.asarray(x)
    mask = x > 0
    return x * mask, mask


def relu_backward(grad_out, mask):
    return grad_out * mask


def dense_forward(x, weights, bias):
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None]
    if x.shape[1] != weights.shape[0] or bias.shape != (weights.shape[1],):
        raise ShapeMismatch(f"dense input {x.shape} incompatible with weights {weights.shape}")
    return x @ weights + bias, x


def dense_backward(grad_out, x, weights):
    return grad_out @ weights.T, x.T @ grad_out, grad_out.sum(axis=0)


def softmax(logits):
    z = np.asarray(logits, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def cross_entropy(probs, labels) -> float:
    """Mean negative log-likelihood of integer ``labels`` under ``probs``."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    picked = probs[np.arange(len(labels)), labels]
    return float(-np.mean(np.log(np.maximum(picked, 1e-300))))


def softmax_xent_backward(probs, labels):
    """Gradient of the mean cross-entropy w.r.t. the logits: (p - onehot) / N."""
    probs = np.atleast_2d(probs)
    labels = np.atleast_1d(labels)
    g = probs.copy()
    g[np.arange(len(labels)), labels] -= 1.0
    return g / len(labels)
