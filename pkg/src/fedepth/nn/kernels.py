"""Shared numeric kernels.

Both the autograd ops and the plain-array fast path call into these
functions, so a value computed with gradients attached is bit-identical to
the same value computed without them.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ShapeError


def dense(x, w, b):
    return x @ w + b


def relu(x):
    return np.maximum(x, 0)


def conv2d(x, w, b, stride, padding, need_cols=False):
    """3x3-style convolution via im2col and one GEMM.

    Returns (out, cols) where cols is the (ckk, n*oh*ow) patch matrix when
    need_cols is set (used by the backward pass), else None.
    """
    n, cin, h, wd = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d input has {cin} channels, kernel expects {cin_w}")
    s, p = stride, padding
    if p:
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p)))
    else:
        xp = x
    oh = (h + 2 * p - kh) // s + 1
    ow = (wd + 2 * p - kw) // s + 1
    if oh < 1 or ow < 1:
        raise ShapeError(f"conv2d kernel {kh}x{kw} does not fit input {h}x{wd}")
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::s, ::s]
    cols = win.transpose(1, 4, 5, 0, 2, 3).reshape(cin * kh * kw, n * oh * ow)
    out = w.reshape(cout, -1) @ cols
    out = out.reshape(cout, n, oh, ow).transpose(1, 0, 2, 3)
    out = out + b.reshape(1, cout, 1, 1)
    return out, (cols if need_cols else None)


def conv2d_input_grad(g, w, x_shape, stride, padding):
    n, cin, h, wd = x_shape
    cout, _, kh, kw = w.shape
    s, p = stride, padding
    _, _, oh, ow = g.shape
    g2 = g.transpose(1, 0, 2, 3).reshape(cout, n * oh * ow)
    dcols = w.reshape(cout, -1).T @ g2
    dcols = dcols.reshape(cin, kh, kw, n, oh, ow)
    dxp = np.zeros((n, cin, h + 2 * p, wd + 2 * p), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i : i + oh * s : s, j : j + ow * s : s] += dcols[
                :, i, j
            ].transpose(1, 0, 2, 3)
    if p:
        return dxp[:, :, p:-p, p:-p]
    return dxp


def groupnorm(x, gain, bias, groups, eps):
    """Per-sample group normalization; statistics never cross the batch."""
    n = x.shape[0]
    c = x.shape[1]
    if c % groups:
        raise ShapeError(f"groupnorm: {groups} groups do not divide {c} channels")
    xr = x.reshape(n, groups, -1)
    mu = xr.mean(axis=2, keepdims=True)
    var = xr.var(axis=2, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = ((xr - mu) * inv_std).reshape(x.shape)
    shape = (1, c) + (1,) * (x.ndim - 2)
    out = xhat * gain.reshape(shape) + bias.reshape(shape)
    return out, (xhat, inv_std)


def groupnorm_input_grad(g, gain, xhat, inv_std, groups):
    n = g.shape[0]
    c = g.shape[1]
    shape = (1, c) + (1,) * (g.ndim - 2)
    dxhat = (g * gain.reshape(shape)).reshape(n, groups, -1)
    xr = xhat.reshape(n, groups, -1)
    dx = inv_std * (
        dxhat
        - dxhat.mean(axis=2, keepdims=True)
        - xr * (dxhat * xr).mean(axis=2, keepdims=True)
    )
    return dx.reshape(g.shape)


def avg_pool(x, kh, kw):
    n, c, h, w = x.shape
    if h % kh or w % kw:
        raise ShapeError(f"avg-pool window {kh}x{kw} does not tile input {h}x{w}")
    xr = x.reshape(n, c, h // kh, kh, w // kw, kw)
    return xr.mean(axis=(3, 5))


def avg_pool_input_grad(g, x_shape, kh, kw):
    n, c, h, w = x_shape
    gexp = g[:, :, :, None, :, None] / np.asarray(kh * kw, dtype=g.dtype)
    return np.broadcast_to(gexp, (n, c, h // kh, kh, w // kw, kw)).reshape(x_shape)


def adapt(x, target):
    """Parameter-free shape adapter: strided spatial subsample, then
    zero-padding of trailing channel/feature positions.

    target is the per-sample shape, e.g. (c, h, w) or (f,).
    """
    per_sample = x.shape[1:]
    if len(per_sample) != len(target):
        raise ShapeError(f"adapter cannot map rank {len(per_sample)} to rank {len(target)}")
    if per_sample == tuple(target):
        return x
    if x.ndim == 4:
        c, h, w = per_sample
        tc, th, tw = target
        if tc < c:
            raise ShapeError(f"adapter cannot shrink channels {c} -> {tc}")
        for name, src, dst in (("height", h, th), ("width", w, tw)):
            if dst > src:
                raise ShapeError(f"adapter cannot grow {name} {src} -> {dst}")
            if src % dst:
                raise ShapeError(f"adapter {name} {src} not a multiple of {dst}")
        y = x[:, :, :: h // th, :: w // tw]
        if tc > c:
            y = np.pad(y, ((0, 0), (0, tc - c), (0, 0), (0, 0)))
        return np.ascontiguousarray(y)
    if x.ndim == 2:
        (f,) = per_sample
        (tf,) = target
        if tf < f:
            raise ShapeError(f"adapter cannot shrink features {f} -> {tf}")
        return np.pad(x, ((0, 0), (0, tf - f)))
    raise ShapeError(f"adapter does not support rank-{x.ndim} inputs")


def adapt_input_grad(g, x_shape):
    if g.shape == x_shape:
        return g
    if len(x_shape) == 4:
        _, c, h, w = x_shape
        _, _, th, tw = g.shape
        gc = g[:, :c]
        if (th, tw) == (h, w):
            return np.ascontiguousarray(gc)
        dx = np.zeros(x_shape, dtype=g.dtype)
        dx[:, :, :: h // th, :: w // tw] = gc
        return dx
    return np.ascontiguousarray(g[:, : x_shape[1]])


def logsumexp(x):
    """Row-wise stable logsumexp over the last axis, keepdims."""
    m = x.max(axis=-1, keepdims=True)
    return m + np.log(np.exp(x - m).sum(axis=-1, keepdims=True))


def softmax(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)
