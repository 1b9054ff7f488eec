"""Differentiable operations. Each records its forward value and adjoint rule."""

import numpy as np

from .sparse import CSRMatrix
from .tape import Node


def _tape_of(*xs):
    for x in xs:
        if isinstance(x, Node):
            return x.tape
    raise TypeError("at least one argument must be a Node")


def _unbroadcast(g, shape):
    # only row-vector / scalar broadcasting is supported
    if g.shape == shape:
        return g
    if shape[0] == 1 and g.shape[0] != 1:
        g = g.sum(axis=0, keepdims=True)
    if shape[1] == 1 and g.shape[1] != 1:
        g = g.sum(axis=1, keepdims=True)
    return g


def _check_broadcast(a, b):
    for d in (0, 1):
        if a.shape[d] != b.shape[d] and 1 not in (a.shape[d], b.shape[d]):
            raise ValueError(f"shapes {a.shape} and {b.shape} do not broadcast")


def matmul(a, b):
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.shape} @ {b.shape}")
    A, B = a.value, b.value
    return tape.record(A @ B, (a, b), lambda g: (g @ B.T, A.T @ g), "matmul")


def spmm(a: CSRMatrix, b):
    """Sparse constant times dense node."""
    tape = b.tape
    if a.shape[1] != b.shape[0]:
        raise ValueError(f"spmm shape mismatch: {a.shape} @ {b.shape}")
    return tape.record(a.matmul(b.value), (b,), lambda g: (a.T.matmul(g),), "spmm")


def add(a, b):
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return tape.record(a.value + b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)), "add")


def sub(a, b):
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    _check_broadcast(a, b)
    sa, sb = a.shape, b.shape
    return tape.record(a.value - b.value, (a, b),
                       lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)), "sub")


def mul(a, b):
    tape = _tape_of(a, b)
    a, b = tape.lift(a), tape.lift(b)
    _check_broadcast(a, b)
    A, B = a.value, b.value
    return tape.record(A * B, (a, b),
                       lambda g: (_unbroadcast(g * B, A.shape), _unbroadcast(g * A, B.shape)), "mul")


def scale(a, c):
    c = float(c)
    return a.tape.record(a.value * c, (a,), lambda g: (g * c,), "scale")


def relu(a):
    mask = a.value > 0  # subgradient 0 at 0
    return a.tape.record(np.where(mask, a.value, 0.0), (a,), lambda g: (g * mask,), "relu")


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def sigmoid(a):
    s = _sigmoid(a.value)
    return a.tape.record(s, (a,), lambda g: (g * s * (1.0 - s),), "sigmoid")


def _softmax(x):
    z = x - x.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def softmax(a):
    s = _softmax(a.value)

    def back(g):
        return (s * (g - (g * s).sum(axis=1, keepdims=True)),)
    return a.tape.record(s, (a,), back, "softmax")


def log(a):
    x = a.value
    if np.any(x <= 0):
        raise ValueError("log of non-positive value")
    return a.tape.record(np.log(x), (a,), lambda g: (g / x,), "log")


def clamped_log(a, lo, hi):
    """log(clip(a, lo, hi)); the adjoint is zero where clipping is active."""
    x = a.value
    c = np.clip(x, lo, hi)
    inside = (x >= lo) & (x <= hi)
    return a.tape.record(np.log(c), (a,), lambda g: (np.where(inside, g / c, 0.0),), "clamped_log")


def square(a):
    x = a.value
    return a.tape.record(x * x, (a,), lambda g: (2.0 * g * x,), "square")


def total(a):
    """Sum of all entries, as a (1, 1) node."""
    shape = a.shape
    return a.tape.record(a.value.sum(), (a,), lambda g: (np.broadcast_to(g, shape).copy(),), "sum")


def mean(a):
    shape = a.shape
    n = a.value.size
    return a.tape.record(a.value.mean(), (a,), lambda g: (np.broadcast_to(g / n, shape).copy(),), "mean")


def row_sum(a):
    shape = a.shape
    return a.tape.record(a.value.sum(axis=1, keepdims=True), (a,),
                         lambda g: (np.broadcast_to(g, shape).copy(),), "row_sum")


def transpose(a):
    return a.tape.record(a.value.T.copy(), (a,), lambda g: (g.T,), "transpose")


def gather_rows(a, idx):
    idx = np.asarray(idx, dtype=np.int64)
    shape = a.shape

    def back(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)
    return a.tape.record(a.value[idx], (a,), back, "gather_rows")


def reverse_grad(a):
    """Identity forward; the adjoint is negated on the way back."""
    return a.tape.record(a.value.copy(), (a,), lambda g: (-g,), "reverse_grad")


def softmax_cross_entropy(logits, targets):
    """Mean over rows of -log softmax(logits)[i, targets[i]].

    Returns ``(loss_node, probabilities)``.
    """
    targets = np.asarray(targets, dtype=np.int64)
    n, c = logits.shape
    if targets.shape != (n,):
        raise ValueError(f"expected {n} targets, got {targets.shape}")
    if targets.size and (targets.min() < 0 or targets.max() >= c):
        raise ValueError(f"target id out of range for {c} classes")
    z = logits.value - logits.value.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(n)
    loss = (lse - z[rows, targets]).mean()
    probs = np.exp(z - lse[:, None])

    def back(g):
        d = probs.copy()
        d[rows, targets] -= 1.0
        return (d * (g[0, 0] / n),)
    return logits.tape.record(loss, (logits,), back, "softmax_xent"), probs


def bce_with_logits(x, targets, weights=None):
    """Sum of weighted binary cross-entropies between sigmoid(x) and targets."""
    y = np.asarray(targets, dtype=np.float64)
    w = np.ones_like(x.value) if weights is None else np.asarray(weights, dtype=np.float64)
    v = x.value
    loss = (w * (np.maximum(v, 0.0) - v * y + np.log1p(np.exp(-np.abs(v))))).sum()
    return x.tape.record(loss, (x,), lambda g: (g[0, 0] * w * (_sigmoid(v) - y),), "bce_logits")
