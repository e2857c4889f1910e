"""Differentiable operations used by the encoders and matching heads.

All image tensors are NCHW. Only the ops the networks need are provided;
there is no general broadcasting.
"""
from __future__ import annotations

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import DimensionError
from .tensor import Tensor, check_finite, make_result


def _t(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# elementwise / structural


def add(a: Tensor, b) -> Tensor:
    if isinstance(b, (int, float)):
        return make_result(a.data + b, (a,), lambda g: (g,))
    b = _t(b)
    if a.shape != b.shape:
        raise DimensionError(f"add: shapes {a.shape} and {b.shape} differ")
    return make_result(a.data + b.data, (a, b), lambda g: (g, g))


def mul(a: Tensor, b) -> Tensor:
    b = _t(b)
    if a.shape != b.shape:
        raise DimensionError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return make_result(ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a: Tensor, c: float) -> Tensor:
    return make_result(a.data * a.data.dtype.type(c), (a,), lambda g: (g * g.dtype.type(c),))


def total(a: Tensor) -> Tensor:
    shape = a.shape
    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,),
                       lambda g: (np.full(shape, g, dtype=g.dtype),))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape {old} -> {tuple(shape)}") from exc
    return make_result(out, (a,), lambda g: (g.reshape(old),))


def concat(xs: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along ``axis`` (feature vectors or channel stacks)."""
    xs = [_t(x) for x in xs]
    if len(xs) == 1:
        return xs[0]
    out = np.concatenate([x.data for x in xs], axis=axis)
    bounds = np.cumsum([x.shape[axis] for x in xs])[:-1]

    def backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result(out, xs, backward)


def take_rows(a: Tensor, index: np.ndarray) -> Tensor:
    """``a[index]`` along axis 0; ``index`` may repeat entries."""
    index = np.asarray(index, dtype=np.intp)
    shape = a.shape

    def backward(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, index, g)
        return (out,)

    return make_result(a.data[index], (a,), backward)


def mean_of(xs: Sequence[Tensor]) -> Tensor:
    """Elementwise mean of same-shape tensors, exactly invariant to their order.

    Values are sorted per element before summation so floating-point
    rounding does not depend on input order.
    """
    xs = [_t(x) for x in xs]
    shape = xs[0].shape
    for x in xs:
        if x.shape != shape:
            raise DimensionError(f"mean_of: shapes {shape} and {x.shape} differ")
    n = len(xs)
    if n == 1:
        out = xs[0].data.copy()
    else:
        stacked = np.sort(np.stack([x.data for x in xs]), axis=0)
        acc = stacked[0].copy()
        for i in range(1, n):
            acc += stacked[i]
        out = acc / acc.dtype.type(n)

    def backward(g):
        gi = g / g.dtype.type(n)
        return tuple(gi for _ in range(n))

    return make_result(out, xs, backward)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result(np.maximum(x.data, 0, dtype=x.dtype), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result(y, (x,), lambda g: (g * (1 - y * y),))


def pointwise(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ValueError(f"unknown pointwise kind {kind!r}")


# --------------------------------------------------------------------------
# layers


def linear(x: Tensor, weight: Tensor, bias: Tensor) -> Tensor:
    """``x @ weight.T + bias`` for ``x`` of shape (N, Din)."""
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise DimensionError(f"linear: input {x.shape} vs weight {weight.shape}")
    if bias.shape != (weight.shape[0],):
        raise DimensionError(f"linear: bias {bias.shape} vs weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = check_finite(xd @ wd.T + bias.data, "linear")

    def backward(g):
        return g @ wd, g.T @ xd, g.sum(axis=0)

    return make_result(out, (x, weight, bias), backward)


def conv_output_size(size: int, k: int, stride: int, pad: int) -> int:
    return (size + 2 * pad - k) // stride + 1


def conv2d(x: Tensor, kernel: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D cross-correlation via im2col and a single matrix product."""
    if x.ndim != 4 or kernel.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernel, got {x.shape}, {kernel.shape}")
    n, c, h, w = x.shape
    k, kc, kh, kw = kernel.shape
    if kc != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {kc}")
    if bias.shape != (k,):
        raise DimensionError(f"conv2d: bias {bias.shape} for {k} output channels")
    if stride < 1:
        raise DimensionError("conv2d: stride must be >= 1")
    if kh > h + 2 * pad or kw > w + 2 * pad:
        raise DimensionError(f"conv2d: kernel {kh}x{kw} larger than padded input {h}x{w}")
    ho = conv_output_size(h, kh, stride, pad)
    wo = conv_output_size(w, kw, stride, pad)

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    # (n, c, ho, wo, kh, kw) -> rows ordered (n, ho, wo), columns (c, kh, kw)
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    cols = np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n * ho * wo, c * kh * kw)
    wmat = kernel.data.reshape(k, -1)
    out = cols @ wmat.T
    out += bias.data
    out = check_finite(out, "conv2d").reshape(n, ho, wo, k).transpose(0, 3, 1, 2)
    out = np.ascontiguousarray(out)
    hp, wp = xp.shape[2], xp.shape[3]

    def backward(g):
        g2 = g.transpose(0, 2, 3, 1).reshape(-1, k)
        dk = (g2.T @ cols).reshape(kernel.shape)
        db = g2.sum(axis=0)
        dx = None
        if x.requires_grad:
            dcols = (g2 @ wmat).reshape(n, ho, wo, c, kh, kw)
            dxp = np.zeros((n, c, hp, wp), dtype=g.dtype)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                        dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            dx = dxp[:, :, pad:pad + h, pad:pad + w] if pad else dxp
        return dx, dk, db

    return make_result(out, (x, kernel, bias), backward)


def maxpool2x2(x: Tensor) -> Tensor:
    """2x2 max pooling, stride 2. Ties route gradient to the first element
    of the window in row-major order."""
    if x.ndim != 4:
        raise DimensionError(f"maxpool2x2: expected 4-D input, got {x.shape}")
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2: spatial size {h}x{w} must be even")
    d = x.data
    corners = (d[:, :, 0::2, 0::2], d[:, :, 0::2, 1::2], d[:, :, 1::2, 0::2], d[:, :, 1::2, 1::2])
    out = np.maximum(np.maximum(corners[0], corners[1]), np.maximum(corners[2], corners[3]))
    masks = []
    taken = np.zeros(out.shape, dtype=bool)
    for corner in corners[:3]:
        m = (corner == out) & ~taken
        masks.append(m)
        taken |= m
    masks.append(~taken)

    def backward(g):
        dx = np.empty((n, c, h, w), dtype=g.dtype)
        dx[:, :, 0::2, 0::2] = g * masks[0]
        dx[:, :, 0::2, 1::2] = g * masks[1]
        dx[:, :, 1::2, 0::2] = g * masks[2]
        dx[:, :, 1::2, 1::2] = g * masks[3]
        return (dx,)

    return make_result(out, (x,), backward)


def _norm_axes(x: Tensor, n_features: int) -> tuple:
    if x.ndim == 2 and x.shape[1] == n_features:
        return (0,)
    if x.ndim == 4 and x.shape[1] == n_features:
        return (0, 2, 3)
    raise DimensionError(f"batch_norm: input {x.shape} vs {n_features} features")


def batch_stats(x: Tensor) -> tuple:
    """Per-feature (mean, biased variance) over batch and spatial axes, float64."""
    axes = (0,) if x.ndim == 2 else (0, 2, 3)
    d = x.data.astype(np.float64)
    return d.mean(axis=axes), d.var(axis=axes)


def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, stats=None, eps: float = 1e-5) -> Tensor:
    """Per-feature standardisation followed by ``gamma * xhat + beta``.

    Features are axis 1 of (N, C) or (N, C, H, W) inputs. Without ``stats``
    the batch's own mean and variance are used (and differentiated through);
    with ``stats=(mean, var)`` they are constants and the op is affine.
    """
    c = gamma.shape[0]
    axes = _norm_axes(x, c)
    if beta.shape != (c,):
        raise DimensionError(f"batch_norm: beta {beta.shape} vs gamma {gamma.shape}")
    view = (1, c) if x.ndim == 2 else (1, c, 1, 1)
    if stats is None:
        mean, var = batch_stats(x)
    else:
        mean, var = (np.asarray(a, dtype=np.float64) for a in stats)
    inv = (1.0 / np.sqrt(var + eps)).astype(x.dtype).reshape(view)
    xhat = (x.data - mean.astype(x.dtype).reshape(view)) * inv
    g_, b_ = gamma.data.reshape(view), beta.data.reshape(view)
    out = check_finite(xhat * g_ + b_, "batch_norm")
    batch_mode = stats is None

    def backward(g):
        dgamma = (g * xhat).sum(axis=axes)
        dbeta = g.sum(axis=axes)
        gx = g * g_
        if batch_mode:
            gx = gx - gx.mean(axis=axes, keepdims=True) - xhat * (gx * xhat).mean(axis=axes, keepdims=True)
        return (gx * inv).astype(g.dtype), dgamma.astype(g.dtype), dbeta.astype(g.dtype)

    return make_result(out, (x, gamma, beta), backward)


# --------------------------------------------------------------------------
# heads and losses


def softmax_np(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    z = logits - logits.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def weighted_mean(scores: Tensor, weight_logits: Tensor) -> Tensor:
    """Convex combination of score columns with softmax-normalised weights.

    ``scores`` is (B, n). ``weight_logits`` is (n,) for per-column weights or
    (1,) for tied weights (plain average). Products are sorted per row before
    summation so tied weights give an exactly order-invariant result.
    """
    b, n = scores.shape
    if weight_logits.shape == (1,):
        logits = np.repeat(weight_logits.data, n)
    elif weight_logits.shape == (n,):
        logits = weight_logits.data
    else:
        raise DimensionError(f"weighted_mean: {weight_logits.shape} weights for {n} scores")
    wts = softmax_np(logits)
    prod = np.sort(scores.data * wts, axis=1)
    acc = prod[:, 0].copy()
    for i in range(1, n):
        acc += prod[:, i]
    tied = weight_logits.shape == (1,)

    def backward(g):
        ds = g[:, None] * wts
        # d out / d logit_j = w_j (s_j - out)
        dl = (g[:, None] * wts * (scores.data - acc[:, None])).sum(axis=0)
        if tied:
            dl = np.asarray([dl.sum()], dtype=g.dtype)
        return ds, dl

    return make_result(acc, (scores, weight_logits), backward)


def _labels_array(label, n) -> np.ndarray:
    arr = np.atleast_1d(np.asarray(label))
    if arr.shape != (n,):
        raise DimensionError(f"hinge: {arr.shape} labels for {n} scores")
    if not np.all((arr == 1) | (arr == -1)):
        raise ValueError("hinge: labels must be +1 or -1")
    return arr


def hinge(score: Tensor, label, margin: float = 1.0) -> Tensor:
    """Mean of ``max(0, margin - label * score)``; subgradient 0 at the kink."""
    if margin <= 0:
        raise ValueError("hinge: margin must be positive")
    s = score.data.reshape(-1)
    y = _labels_array(label, s.size).astype(s.dtype)
    viol = margin - y * s
    active = viol > 0
    loss = np.asarray(np.where(active, viol, 0).sum() / s.size, dtype=s.dtype)
    shape = score.shape

    def backward(g):
        return ((-y * active * g / s.size).astype(g.dtype).reshape(shape),)

    return make_result(check_finite(loss, "hinge"), (score,), backward)


def cross_entropy(logits: Tensor, target) -> Tensor:
    """Mean of ``-log softmax(logits)[target]``; logits (k,) or (N, k)."""
    z = logits.data if logits.ndim == 2 else logits.data[None, :]
    n, k = z.shape
    t = np.atleast_1d(np.asarray(target))
    if t.shape != (n,) or not np.issubdtype(t.dtype, np.integer):
        raise ValueError(f"cross_entropy: need {n} integer targets, got {t!r}")
    if np.any(t < 0) or np.any(t >= k):
        raise ValueError(f"cross_entropy: target index out of range 0..{k - 1}")
    shift = z - z.max(axis=1, keepdims=True)
    logsum = np.log(np.exp(shift).sum(axis=1))
    nll = logsum - shift[np.arange(n), t]
    loss = np.asarray(nll.mean(), dtype=z.dtype)
    shape = logits.shape

    def backward(g):
        p = np.exp(shift - logsum[:, None])
        p[np.arange(n), t] -= 1
        return ((p * (g / n)).astype(g.dtype).reshape(shape),)

    return make_result(check_finite(loss, "cross_entropy"), (logits,), backward)
