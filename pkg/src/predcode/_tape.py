"""Minimal reverse-mode differentiation over numpy arrays.

Only the handful of operations the unrolled PCN graph needs: matmul,
transpose, add/sub, scaling by a constant, ReLU and a fused softmax
cross-entropy. ``Var`` mimics enough of the ndarray protocol (``@``, ``+``,
``-``, ``*`` by scalars, ``.T``) that the same forward code runs on raw
arrays or on ``Var`` nodes.
"""

from __future__ import annotations

import numpy as np


class Var:
    __array_priority__ = 1000  # make ndarray @ Var defer to Var

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._parents = parents
        self._backward = backward

    @property
    def shape(self):
        return self.value.shape

    @property
    def T(self) -> "Var":
        def bw(g):
            return (g.T,)
        return Var(self.value.T, (self,), bw)

    def __matmul__(self, other) -> "Var":
        other = lift(other)
        a, b = self.value, other.value

        def bw(g):
            if a.ndim == 2 and b.ndim == 2:
                return g @ b.T, a.T @ g
            if a.ndim == 1 and b.ndim == 2:
                return b @ g, np.outer(a, g)
            if a.ndim == 2 and b.ndim == 1:
                return np.outer(g, b), a.T @ g
            return g * b, g * a
        return Var(a @ b, (self, other), bw)

    def __rmatmul__(self, other) -> "Var":
        return lift(other) @ self

    def __add__(self, other) -> "Var":
        other = lift(other)

        def bw(g):
            return _unbroadcast(g, self.value.shape), _unbroadcast(g, other.value.shape)
        return Var(self.value + other.value, (self, other), bw)

    __radd__ = __add__

    def __neg__(self) -> "Var":
        return Var(-self.value, (self,), lambda g: (-g,))

    def __sub__(self, other) -> "Var":
        return self + (-lift(other))

    def __rsub__(self, other) -> "Var":
        return lift(other) + (-self)

    def __mul__(self, c) -> "Var":
        if isinstance(c, Var):
            raise TypeError("only scaling by constants is supported")
        c = float(c)
        return Var(self.value * c, (self,), lambda g: (g * c,))

    __rmul__ = __mul__

    def backward(self):
        order, seen = [], set()

        def visit(v):
            if id(v) in seen:
                return
            seen.add(id(v))
            for p in v._parents:
                visit(p)
            order.append(v)

        visit(self)
        self.grad = np.ones_like(self.value)
        for v in reversed(order):
            if v._backward is None or v.grad is None:
                continue
            for p, g in zip(v._parents, v._backward(v.grad)):
                p.grad = g if p.grad is None else p.grad + g


def lift(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def relu(x):
    if not isinstance(x, Var):
        return np.maximum(x, 0.0)
    mask = x.value > 0
    return Var(np.where(mask, x.value, 0.0), (x,), lambda g: (g * mask,))


def softmax_xent(logits: Var, labels: np.ndarray) -> Var:
    """Mean cross-entropy of integer ``labels`` under softmax(``logits``)."""
    z = logits.value
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = z.shape[0]
    loss = -logp[np.arange(n), labels].mean()

    def bw(g):
        p = np.exp(logp)
        p[np.arange(n), labels] -= 1.0
        return (g * p / n,)
    return Var(loss, (logits,), bw)
