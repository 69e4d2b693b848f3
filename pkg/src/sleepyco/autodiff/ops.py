"""Differentiable operations over :class:`Tensor`.

Each function computes its forward value with numpy and registers a closure
that maps the output gradient to parent gradients.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .tensor import DTYPE, Tensor, as_tensor, is_grad_enabled, unbroadcast


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data + b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(g, sb))
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    sa, sb = a.shape, b.shape
    return Tensor._from_op(
        a.data - b.data, (a, b), lambda g: (unbroadcast(g, sa), unbroadcast(-g, sb))
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data

    def backward(g):
        ga = unbroadcast(g * bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(g * ad, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad * bd, (a, b), backward)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    out = ad / bd

    def backward(g):
        ga = unbroadcast(g / bd, ad.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / bd, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(out, (a, b), backward)


def neg(a: Tensor) -> Tensor:
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,))


def power(a: Tensor, exponent: float) -> Tensor:
    ad = a.data
    return Tensor._from_op(
        ad**exponent, (a,), lambda g: (g * exponent * ad ** (exponent - 1),)
    )


def exp(a: Tensor) -> Tensor:
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    ad = a.data
    return Tensor._from_op(np.log(ad), (a,), lambda g: (g / ad,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * 0.5 / out,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    return Tensor._from_op(a.data * mask, (a,), lambda g: (g * mask,))


def prelu(x: Tensor, alpha: Tensor, axis: int = 1) -> Tensor:
    """Parametric ReLU with one learned slope per channel along ``axis``."""
    xd = x.data
    axis = axis % xd.ndim
    if alpha.data.shape != (xd.shape[axis],):
        raise ValueError(
            f"prelu expects {xd.shape[axis]} slopes for axis {axis}, got shape {alpha.shape}"
        )
    bshape = [1] * xd.ndim
    bshape[axis] = -1
    a = alpha.data.reshape(bshape)
    neg_mask = xd < 0
    out = np.where(neg_mask, a * xd, xd)
    reduce_axes = tuple(i for i in range(xd.ndim) if i != axis)

    def backward(g):
        gx = g * np.where(neg_mask, a, 1.0) if x.requires_grad else None
        ga = (g * xd * neg_mask).sum(axis=reduce_axes) if alpha.requires_grad else None
        return gx, ga

    return Tensor._from_op(out, (x, alpha), backward)


# ---------------------------------------------------------------------------
# shape and reductions


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = a.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Tensor._from_op(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    shape = a.shape
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([shape[i] for i in axes]))

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, shape),)

    return Tensor._from_op(np.asarray(a.data.mean(axis=axis, keepdims=keepdims)), (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


def transpose(a: Tensor, axes=None) -> Tensor:
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def getitem(a: Tensor, index) -> Tensor:
    shape = a.shape

    def backward(g):
        full = np.zeros(shape, dtype=DTYPE)
        np.add.at(full, index, g)
        return (full,)

    return Tensor._from_op(np.array(a.data[index]), (a,), backward)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def backward(g):
        return tuple(
            np.take(g, np.arange(bounds[i], bounds[i + 1]), axis=axis) for i in range(len(tensors))
        )

    return Tensor._from_op(np.concatenate([t.data for t in tensors], axis=axis), tensors, backward)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor._from_op(np.stack([t.data for t in tensors], axis=axis), tensors, backward)


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a, b) -> Tensor:
    """Batched matrix product with numpy broadcasting over leading axes."""
    a, b = as_tensor(a), as_tensor(b)
    ad, bd = a.data, b.data
    if ad.ndim < 2 or bd.ndim < 2:
        raise ValueError("matmul operands must be at least 2-D")
    if ad.shape[-1] != bd.shape[-2]:
        raise ValueError(f"matmul inner extents differ: {ad.shape} @ {bd.shape}")

    def backward(g):
        ga = unbroadcast(g @ np.swapaxes(bd, -1, -2), ad.shape) if a.requires_grad else None
        gb = unbroadcast(np.swapaxes(ad, -1, -2) @ g, bd.shape) if b.requires_grad else None
        return ga, gb

    return Tensor._from_op(ad @ bd, (a, b), backward)


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """Affine map over the last axis; ``weight`` is ``D_in x D_out``."""
    xd, wd = x.data, weight.data
    if xd.shape[-1] != wd.shape[0]:
        raise ValueError(
            f"linear: input last extent {xd.shape[-1]} does not match weight rows {wd.shape[0]}"
        )
    lead = xd.shape[:-1]
    x2 = xd.reshape(-1, wd.shape[0])
    out = x2 @ wd
    if bias is not None:
        if bias.shape != (wd.shape[1],):
            raise ValueError(f"linear: bias shape {bias.shape} does not match {wd.shape[1]} outputs")
        out = out + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.reshape(-1, wd.shape[1])
        gx = (g2 @ wd.T).reshape(xd.shape) if x.requires_grad else None
        gw = x2.T @ g2 if weight.requires_grad else None
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._from_op(out.reshape(lead + (wd.shape[1],)), parents, backward)


# ---------------------------------------------------------------------------
# normalisation and probability


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor._from_op(out, (x,), backward)


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    shifted = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    out = shifted - lse

    def backward(g):
        return (g - np.exp(out) * g.sum(axis=axis, keepdims=True),)

    return Tensor._from_op(out, (x,), backward)


def cross_entropy(logits: Tensor, targets: np.ndarray, reduction: str = "mean") -> Tensor:
    """Categorical cross-entropy of ``logits`` (N x C) against integer targets."""
    targets = np.asarray(targets, dtype=np.int64)
    n = logits.shape[0]
    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(n), targets]
    total = -picked.sum()
    if reduction == "sum":
        return total
    if reduction == "mean":
        return total / n
    raise ValueError(f"unknown reduction {reduction!r}")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis, then scale and shift."""
    xd = x.data
    d = xd.shape[-1]
    if d < 2:
        raise ValueError("layer_norm needs at least two features")
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = xhat * gamma.data + beta.data
    lead_axes = tuple(range(xd.ndim - 1))

    def backward(g):
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            gx = inv * (gh - gh.mean(axis=-1, keepdims=True) - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        gg = (g * xhat).sum(axis=lead_axes) if gamma.requires_grad else None
        gb = g.sum(axis=lead_axes) if beta.requires_grad else None
        return gx, gg, gb

    return Tensor._from_op(out, (x, gamma, beta), backward)


def batch_norm1d(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running_mean: Optional[np.ndarray],
    running_var: Optional[np.ndarray],
    training: bool,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Per-channel normalisation of a ``B x C x T`` tensor.

    In training mode the batch statistics over (B, T) are used and the running
    buffers are updated in place (unbiased variance, exponential average).
    """
    xd = x.data
    if xd.ndim != 3:
        raise ValueError(f"batch_norm1d expects B x C x T, got {xd.shape}")
    c = xd.shape[1]
    g_ = gamma.data.reshape(1, c, 1)
    b_ = beta.data.reshape(1, c, 1)
    if training:
        m = xd.shape[0] * xd.shape[2]
        if m < 2:
            raise ValueError("batch_norm1d in training mode needs B*T >= 2")
        mu = xd.mean(axis=(0, 2), keepdims=True)
        xc = xd - mu
        var = (xc * xc).mean(axis=(0, 2), keepdims=True)
        inv = 1.0 / np.sqrt(var + eps)
        xhat = xc * inv
        if running_mean is not None:
            running_mean *= 1.0 - momentum
            running_mean += momentum * mu.reshape(c)
            running_var *= 1.0 - momentum
            running_var += momentum * var.reshape(c) * m / (m - 1)

        def backward(g):
            gx = None
            if x.requires_grad:
                gh = g * g_
                gx = inv * (
                    gh - gh.mean(axis=(0, 2), keepdims=True) - xhat * (gh * xhat).mean(axis=(0, 2), keepdims=True)
                )
            gg = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
            gb = g.sum(axis=(0, 2)) if beta.requires_grad else None
            return gx, gg, gb
    else:
        if running_mean is None or running_var is None:
            raise RuntimeError("batch_norm1d in eval mode needs initialised running statistics")
        inv = (1.0 / np.sqrt(running_var + eps)).reshape(1, c, 1)
        xhat = (xd - running_mean.reshape(1, c, 1)) * inv

        def backward(g):
            gx = g * g_ * inv if x.requires_grad else None
            gg = (g * xhat).sum(axis=(0, 2)) if gamma.requires_grad else None
            gb = g.sum(axis=(0, 2)) if beta.requires_grad else None
            return gx, gg, gb

    return Tensor._from_op(xhat * g_ + b_, (x, gamma, beta), backward)


def l2_normalize(x: Tensor, axis: int = -1) -> Tensor:
    """Scale each vector along ``axis`` to unit Euclidean norm."""
    xd = x.data
    norm = np.sqrt((xd * xd).sum(axis=axis, keepdims=True))
    if np.any(norm == 0):
        raise ValueError("cannot normalise a zero vector")
    out = xd / norm

    def backward(g):
        return ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,)

    return Tensor._from_op(out, (x,), backward)


def dropout(x: Tensor, p: float, rng: Optional[np.random.Generator], training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in training mode needs an rng")
    keep = _dropout_mask(rng, x.shape, p)
    scale = 1.0 / (1.0 - p)
    return Tensor._from_op(x.data * keep * scale, (x,), lambda g: (g * keep * scale,))


# ---------------------------------------------------------------------------
# 1-D convolution and pooling


def _im2col(xp: np.ndarray, k: int, stride: int, t_out: int) -> np.ndarray:
    win = sliding_window_view(xp, k, axis=2)[:, :, : (t_out - 1) * stride + 1 : stride, :]
    b, c = xp.shape[:2]
    return win.transpose(0, 2, 1, 3).reshape(b * t_out, c * k)


def conv1d(
    x: Tensor, weight: Tensor, bias: Optional[Tensor] = None, stride: int = 1, padding: int = 0
) -> Tensor:
    """Cross-correlation of ``B x C_in x T`` with ``C_out x C_in x K`` kernels."""
    xd, wd = x.data, weight.data
    if xd.ndim != 3 or wd.ndim != 3:
        raise ValueError(f"conv1d expects 3-D input and weight, got {xd.shape} and {wd.shape}")
    b, c_in, t = xd.shape
    c_out, wc, k = wd.shape
    if wc != c_in:
        raise ValueError(f"conv1d: input has {c_in} channels but weight expects {wc}")
    if stride < 1:
        raise ValueError("conv1d stride must be >= 1")
    if k > t + 2 * padding:
        raise ValueError(f"conv1d kernel width {k} exceeds padded length {t + 2 * padding}")
    t_out = (t + 2 * padding - k) // stride + 1
    xp = np.pad(xd, ((0, 0), (0, 0), (padding, padding))) if padding else xd
    wm = wd.reshape(c_out, c_in * k)
    cols = _im2col(xp, k, stride, t_out)
    out = cols @ wm.T
    if bias is not None:
        out += bias.data
    out = out.reshape(b, t_out, c_out).transpose(0, 2, 1)
    parents = (x, weight) if bias is None else (x, weight, bias)

    def backward(g):
        g2 = g.transpose(0, 2, 1).reshape(b * t_out, c_out)
        gw = None
        if weight.requires_grad:
            gw = (g2.T @ _im2col(xp, k, stride, t_out)).reshape(wd.shape)
        gx = None
        if x.requires_grad:
            dcols = (g2 @ wm).reshape(b, t_out, c_in, k)
            gxp = np.zeros(xp.shape, dtype=DTYPE)
            stop = (t_out - 1) * stride + 1
            for j in range(k):
                gxp[:, :, j : j + stop : stride] += dcols[:, :, :, j].transpose(0, 2, 1)
            gx = gxp[:, :, padding : padding + t] if padding else gxp
        if bias is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return Tensor._from_op(np.ascontiguousarray(out), parents, backward)


def maxpool1d_ceil(x: Tensor, window: int) -> Tensor:
    """Non-overlapping max pooling whose output length is ceil(T / window).

    A trailing partial window is pooled over the samples it has. The gradient
    goes to the first maximal element of each window.
    """
    xd = x.data
    if window < 1:
        raise ValueError("pool window must be >= 1")
    b, c, t = xd.shape
    if t == 0:
        raise ValueError("cannot pool an empty sequence")
    t_out = math.ceil(t / window)
    pad = t_out * window - t
    xp = np.pad(xd, ((0, 0), (0, 0), (0, pad)), constant_values=-np.inf) if pad else xd
    blocks = xp.reshape(b, c, t_out, window)
    idx = blocks.argmax(axis=-1)
    out = np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(g):
        gblocks = np.zeros((b, c, t_out, window), dtype=DTYPE)
        np.put_along_axis(gblocks, idx[..., None], g[..., None], axis=-1)
        return (gblocks.reshape(b, c, t_out * window)[:, :, :t],)

    return Tensor._from_op(out, (x,), backward)


ATTENTION_CACHE_BYTES = 512 * 2**20


def _dropout_mask(rng: np.random.Generator, shape, p: float) -> np.ndarray:
    return rng.random(shape, dtype=np.float32) >= np.float32(p)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor, chunk: int = 64) -> Tensor:
    """softmax(q k^T / sqrt(d)) v over the last two axes.

    Query rows are processed in blocks of ``chunk`` so each block of the
    T x T weight matrix stays cache-resident. The weights are kept for the
    backward pass when they fit in ``ATTENTION_CACHE_BYTES``, else recomputed.
    """
    qd, kd, vd = q.data, k.data, v.data
    if qd.shape[:-2] != kd.shape[:-2] or kd.shape[:-1] != vd.shape[:-1] or qd.shape[-1] != kd.shape[-1]:
        raise ValueError(f"incompatible attention shapes q {qd.shape}, k {kd.shape}, v {vd.shape}")
    lead = qd.shape[:-2]
    tq, d = qd.shape[-2:]
    qf = qd.reshape(-1, tq, d)
    kf = kd.reshape(-1, kd.shape[-2], d)
    vf = vd.reshape(-1, vd.shape[-2], vd.shape[-1])
    scale = 1.0 / math.sqrt(d)

    def weights(n, s):
        w = qf[n, s : s + chunk] @ kf[n].T
        w *= scale
        w -= w.max(axis=-1, keepdims=True)
        np.exp(w, out=w)
        w /= w.sum(axis=-1, keepdims=True)
        return w

    out = np.empty(qf.shape[:-1] + (vf.shape[-1],))
    tracked = is_grad_enabled() and (q.requires_grad or k.requires_grad or v.requires_grad)
    keep = tracked and qf.shape[0] * tq * kf.shape[-2] * 8 <= ATTENTION_CACHE_BYTES
    cache = {}
    for n in range(qf.shape[0]):
        for s in range(0, tq, chunk):
            w = weights(n, s)
            if keep:
                cache[n, s] = w
            out[n, s : s + chunk] = w @ vf[n]

    def backward(g):
        gf = g.reshape(out.shape)
        gq = np.empty_like(qf)
        gk = np.zeros_like(kf)
        gv = np.zeros_like(vf)
        for n in range(qf.shape[0]):
            for s in range(0, tq, chunk):
                w = cache.pop((n, s)) if keep else weights(n, s)
                gs = gf[n, s : s + chunk]
                gv[n] += w.T @ gs
                gw = gs @ vf[n].T
                gw -= (gw * w).sum(axis=-1, keepdims=True)
                gw *= w
                gw *= scale
                gq[n, s : s + chunk] = gw @ kf[n]
                gk[n] += gw.T @ qf[n, s : s + chunk]
        return gq.reshape(qd.shape), gk.reshape(kd.shape), gv.reshape(vd.shape)

    return Tensor._from_op(out.reshape(lead + out.shape[-2:]), (q, k, v), backward)
