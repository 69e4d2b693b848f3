"""Finite-difference gradient checks over every differentiable operation and both losses."""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, Dict, List, Tuple

import numpy as np

from .autodiff import Tensor, ops
from .autodiff.gradcheck import check_gradients, scalarize
from .contrastive import LatentBatch, supcon_loss

TOLERANCE = 1e-4

# A case builds (fn, arrays) from an rng; fn maps Tensors to a scalar Tensor.
Case = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[np.ndarray]]]


def _away_from_zero(rng, shape, lo=0.1):
    """Random values with |x| >= lo so kinks (relu, prelu, max) stay out of the stencil."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(lo, 1.0, size=shape)


def _weighted(rng, shape):
    w = rng.standard_normal(shape)
    return lambda out: scalarize(out, w)


def _unary(op, sample=None):
    def build(rng):
        shape = tuple(rng.integers(2, 5, size=2))
        x = sample(rng, shape) if sample else rng.standard_normal(shape)
        red = _weighted(rng, shape)
        return (lambda a: red(op(a))), [x]
    return build


def _binary(op, positive_b=False):
    def build(rng):
        shape = tuple(rng.integers(2, 5, size=2))
        b_shape = shape if rng.random() < 0.5 else (1, shape[1])  # exercise broadcasting
        a = rng.standard_normal(shape)
        b = rng.uniform(0.5, 2.0, b_shape) if positive_b else rng.standard_normal(b_shape)
        red = _weighted(rng, shape)
        return (lambda x, y: red(op(x, y))), [a, b]
    return build


def _prelu(rng):
    b, c, t = rng.integers(1, 4), rng.integers(1, 4), rng.integers(2, 6)
    x = _away_from_zero(rng, (b, c, t))
    alpha = rng.uniform(0.05, 0.5, c)
    red = _weighted(rng, (b, c, t))
    return (lambda x_, a_: red(ops.prelu(x_, a_))), [x, alpha]


def _reduction(kind):
    def build(rng):
        shape = (3, 4, 2)
        axis = [None, 0, 1, 2][rng.integers(0, 4)]
        keep = bool(rng.integers(0, 2))
        out_shape = np.sum(np.zeros(shape), axis=axis, keepdims=keep).shape
        red = _weighted(rng, out_shape)
        fn = ops.sum if kind == "sum" else ops.mean
        return (lambda a: red(fn(a, axis=axis, keepdims=keep))), [rng.standard_normal(shape)]
    return build


def _reshape(rng):
    red = _weighted(rng, (4, 6))
    return (lambda a: red(ops.reshape(a, (4, 6)))), [rng.standard_normal((2, 3, 4))]


def _transpose(rng):
    axes = tuple(rng.permutation(3))
    shape = (2, 3, 4)
    red = _weighted(rng, tuple(shape[i] for i in axes))
    return (lambda a: red(ops.transpose(a, axes))), [rng.standard_normal(shape)]


def _getitem(rng):
    idx = (slice(1, None), np.array([0, 2, 2]))  # repeated index exercises accumulation
    red = _weighted(rng, (3, 3))
    return (lambda a: red(ops.getitem(a, idx))), [rng.standard_normal((4, 3))]


def _concat(rng):
    axis = int(rng.integers(0, 2))
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    red = _weighted(rng, np.concatenate([a, b], axis=axis).shape)
    return (lambda x, y: red(ops.concat([x, y], axis=axis))), [a, b]


def _stack(rng):
    a, b = rng.standard_normal((2, 3)), rng.standard_normal((2, 3))
    red = _weighted(rng, (2, 2, 3))
    return (lambda x, y: red(ops.stack([x, y], axis=1))), [a, b]


def _matmul(rng):
    n, m, p = rng.integers(1, 5, size=3)
    a, b = rng.standard_normal((2, n, m)), rng.standard_normal((m, p))
    red = _weighted(rng, (2, n, p))
    return (lambda x, y: red(ops.matmul(x, y))), [a, b]


def _linear(rng):
    d_in, d_out = rng.integers(1, 5, size=2)
    x, w, b = rng.standard_normal((3, d_in)), rng.standard_normal((d_in, d_out)), rng.standard_normal(d_out)
    red = _weighted(rng, (3, d_out))
    return (lambda x_, w_, b_: red(ops.linear(x_, w_, b_))), [x, w, b]


def _softmax(kind):
    def build(rng):
        shape = (3, int(rng.integers(2, 6)))
        axis = int(rng.integers(0, 2))
        fn = ops.softmax if kind == "softmax" else ops.log_softmax
        red = _weighted(rng, shape)
        return (lambda a: red(fn(a, axis=axis))), [rng.standard_normal(shape)]
    return build


def _cross_entropy(rng):
    n = int(rng.integers(1, 6))
    y = rng.integers(0, 5, n)
    reduction = ["mean", "sum"][rng.integers(0, 2)]
    return (lambda o: ops.cross_entropy(o, y, reduction)), [rng.standard_normal((n, 5))]


def _layer_norm(rng):
    d = int(rng.integers(2, 6))
    x, g, b = rng.standard_normal((3, d)), rng.standard_normal(d), rng.standard_normal(d)
    red = _weighted(rng, (3, d))
    return (lambda x_, g_, b_: red(ops.layer_norm(x_, g_, b_))), [x, g, b]


def _batch_norm(training):
    def build(rng):
        b, c, t = int(rng.integers(2, 4)), int(rng.integers(1, 4)), int(rng.integers(2, 5))
        x, g, be = rng.standard_normal((b, c, t)), rng.standard_normal(c), rng.standard_normal(c)
        mean, var = rng.standard_normal(c), rng.uniform(0.5, 2.0, c)
        red = _weighted(rng, (b, c, t))

        def fn(x_, g_, b_):
            return red(ops.batch_norm1d(x_, g_, b_, mean.copy(), var.copy(), training, 0.1, 1e-5))
        return fn, [x, g, be]
    return build


def _l2_normalize(rng):
    shape = (3, int(rng.integers(2, 6)))
    red = _weighted(rng, shape)
    return (lambda a: red(ops.l2_normalize(a, axis=-1))), [rng.standard_normal(shape)]


def _dropout(rng):
    seed = int(rng.integers(0, 2**31))
    shape = (4, 5)
    red = _weighted(rng, shape)
    return (lambda a: red(ops.dropout(a, 0.3, np.random.default_rng(seed), True))), [rng.standard_normal(shape)]


def _conv1d(rng):
    b, c_in, c_out = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
    k, stride, pad = int(rng.integers(1, 4)), int(rng.integers(1, 3)), int(rng.integers(0, 2))
    t = int(rng.integers(max(k, 3), 9))
    x, w, bias = rng.standard_normal((b, c_in, t)), rng.standard_normal((c_out, c_in, k)), rng.standard_normal(c_out)
    t_out = (t + 2 * pad - k) // stride + 1
    red = _weighted(rng, (b, c_out, t_out))
    return (lambda x_, w_, b_: red(ops.conv1d(x_, w_, b_, stride=stride, padding=pad))), [x, w, bias]


def _maxpool(rng):
    window, t = int(rng.integers(1, 6)), int(rng.integers(1, 13))
    # distinct, well separated values keep the argmax fixed under +-h
    x = rng.permutation(2 * t * 3).reshape(1, 2, -1)[:, :, :t].astype(np.float64) * 0.1
    x = x + rng.uniform(-0.01, 0.01, x.shape)
    red = _weighted(rng, (1, 2, -(-t // window)))
    return (lambda a: red(ops.maxpool1d_ceil(a, window))), [x]


def _attention(rng):
    b, h, t, d = 1, int(rng.integers(1, 3)), int(rng.integers(1, 7)), int(rng.integers(1, 4))
    q, k, v = (rng.standard_normal((b, h, t, d)) for _ in range(3))
    chunk = int(rng.integers(1, 4))
    red = _weighted(rng, (b, h, t, d))
    return (lambda q_, k_, v_: red(ops.scaled_dot_attention(q_, k_, v_, chunk=chunk))), [q, k, v]


def _supcon(rng):
    n = 2 * int(rng.integers(2, 5))
    labels = np.repeat(rng.integers(0, 3, n // 2), 2)
    tau = float(rng.uniform(0.05, 1.0))
    z = rng.standard_normal((n, 4))

    def fn(z_):
        return supcon_loss(LatentBatch(ops.l2_normalize(z_, axis=-1), labels), tau)
    return fn, [z]


def _se_block(rng):
    from .backbone import SEBlock, se_block

    c, t = int(rng.integers(2, 6)), int(rng.integers(2, 6))
    se = SEBlock(c, 2, rng)
    red = _weighted(rng, (2, c, t))

    def fn(u, w1, b1, w2, b2):
        se.fc1.weight, se.fc1.bias, se.fc2.weight, se.fc2.bias = w1, b1, w2, b2
        return red(se_block(u, se.fc1, se.fc2))
    params = [se.fc1.weight.data, se.fc1.bias.data + 0.5, se.fc2.weight.data, se.fc2.bias.data]
    return fn, [rng.standard_normal((2, c, t))] + [p.copy() for p in params]


def _attention_pool(rng):
    from .classifier import AttentionPool

    d, t = int(rng.integers(2, 5)), int(rng.integers(1, 6))
    pool = AttentionPool(d, rng)
    red = _weighted(rng, (2, d))

    def fn(h, w, b, w_att):
        pool.proj.weight, pool.proj.bias, pool.w_att = w, b, w_att
        return red(pool(h))
    return fn, [rng.standard_normal((2, t, d)), pool.proj.weight.data.copy(),
                pool.proj.bias.data.copy(), rng.standard_normal((d, 1))]


def _mtcl(rng):
    from .training import mtcl_loss

    n = int(rng.integers(1, 5))
    y = rng.integers(0, 5, n)
    return (lambda a, b, c: mtcl_loss([a, b, c], y)), [rng.standard_normal((n, 5)) for _ in range(3)]


CASES: Dict[str, Case] = {
    "add": _binary(ops.add),
    "sub": _binary(ops.sub),
    "mul": _binary(ops.mul),
    "div": _binary(ops.div, positive_b=True),
    "neg": _unary(ops.neg),
    "power": _unary(lambda a: ops.power(a, 3.0)),
    "exp": _unary(ops.exp),
    "log": _unary(ops.log, lambda r, s: r.uniform(0.5, 2.0, s)),
    "sqrt": _unary(ops.sqrt, lambda r, s: r.uniform(0.5, 2.0, s)),
    "tanh": _unary(ops.tanh),
    "sigmoid": _unary(ops.sigmoid),
    "relu": _unary(ops.relu, _away_from_zero),
    "prelu": _prelu,
    "sum": _reduction("sum"),
    "mean": _reduction("mean"),
    "reshape": _reshape,
    "transpose": _transpose,
    "getitem": _getitem,
    "concat": _concat,
    "stack": _stack,
    "matmul": _matmul,
    "linear": _linear,
    "softmax": _softmax("softmax"),
    "log_softmax": _softmax("log_softmax"),
    "cross_entropy": _cross_entropy,
    "layer_norm": _layer_norm,
    "batch_norm1d_train": _batch_norm(True),
    "batch_norm1d_eval": _batch_norm(False),
    "l2_normalize": _l2_normalize,
    "dropout": _dropout,
    "conv1d": _conv1d,
    "maxpool1d_ceil": _maxpool,
    "scaled_dot_attention": _attention,
    "se_block": _se_block,
    "attention_pool": _attention_pool,
    "supcon_loss": _supcon,
    "mtcl_loss": _mtcl,
}


@dataclass
class CaseReport:
    name: str
    instances: int
    max_rel_error: float
    seconds: float

    @property
    def passed(self) -> bool:
        return self.max_rel_error < TOLERANCE


def run_suite(instances: int = 20, seed: int = 0, names=None) -> List[CaseReport]:
    reports = []
    for i, (name, build) in enumerate(CASES.items()):
        if names and name not in names:
            continue
        t0 = time.perf_counter()
        worst = 0.0
        for j in range(instances):
            fn, arrays = build(np.random.default_rng([seed, i, j]))
            worst = max(worst, check_gradients(fn, arrays))
        reports.append(CaseReport(name, instances, worst, time.perf_counter() - t0))
    return reports
