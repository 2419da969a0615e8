"""Minimal reverse-mode automatic differentiation over numpy arrays.

Every op accepts either plain ``np.ndarray`` values or :class:`Var` nodes.
When no argument is a ``Var`` the op returns a plain array, so the same
forward code serves inference (fast path) and training (taped path).
"""

from __future__ import annotations

import numpy as np

from ..errors import NumericError


class Var:
    """A node in the computation graph holding a float64 value."""

    __slots__ = ("value", "grad", "parents", "backward_fn")
    __array_ufunc__ = None  # make numpy defer to our reflected operators

    def __init__(self, value, parents=(), backward_fn=None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    @property
    def T(self):
        return transpose(self)

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, idx):
        return getitem(self, idx)


def is_var(x):
    return isinstance(x, Var)


def value(x):
    """Underlying array of ``x`` whether or not it is a ``Var``."""
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def stop_gradient(x):
    """Treat ``x`` as a constant: the result carries no graph history."""
    return value(x).copy() if isinstance(x, Var) else x


def _node(out, inputs, backward_fn):
    # inputs that are not Vars are constants; their grads are discarded
    parents = tuple(p if isinstance(p, Var) else None for p in inputs)
    return Var(out, parents, backward_fn)


def primitive(out, inputs, backward_fn):
    """Register a fused op: ``backward_fn(g)`` returns one gradient per input."""
    if not _any_var(*inputs):
        return out
    return _node(out, inputs, backward_fn)


def _unbroadcast(g, shape):
    """Sum ``g`` down to ``shape`` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g


def _any_var(*xs):
    return any(isinstance(x, Var) for x in xs)


def add(a, b):
    if not _any_var(a, b):
        return np.add(a, b)
    av, bv = value(a), value(b)
    return _node(av + bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(g, bv.shape)))


def sub(a, b):
    if not _any_var(a, b):
        return np.subtract(a, b)
    av, bv = value(a), value(b)
    return _node(av - bv, (a, b), lambda g: (_unbroadcast(g, av.shape), _unbroadcast(-g, bv.shape)))


def mul(a, b):
    if not _any_var(a, b):
        return np.multiply(a, b)
    av, bv = value(a), value(b)
    return _node(
        av * bv, (a, b), lambda g: (_unbroadcast(g * bv, av.shape), _unbroadcast(g * av, bv.shape))
    )


def div(a, b):
    if not _any_var(a, b):
        return np.divide(a, b)
    av, bv = value(a), value(b)
    out = av / bv
    return _node(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / bv, av.shape), _unbroadcast(-g * out / bv, bv.shape)),
    )


def neg(a):
    if not isinstance(a, Var):
        return np.negative(a)
    return _node(-a.value, (a,), lambda g: (-g,))


def power(a, p):
    """``a ** p`` for a constant scalar exponent ``p``."""
    if not isinstance(a, Var):
        return np.power(a, p)
    av = a.value
    return _node(av**p, (a,), lambda g: (g * p * av ** (p - 1),))


def matmul(a, b):
    if not _any_var(a, b):
        return np.matmul(a, b)
    av, bv = value(a), value(b)
    if av.ndim != 2 or bv.ndim != 2:
        raise ValueError("matmul is only taped for 2-D operands")
    return _node(av @ bv, (a, b), lambda g: (g @ bv.T, av.T @ g))


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    out = np.exp(a.value)
    return _node(out, (a,), lambda g: (g * out,))


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    av = a.value
    return _node(np.log(av), (a,), lambda g: (g / av,))


def sqrt(a):
    if not isinstance(a, Var):
        return np.sqrt(a)
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g * 0.5 / out,))


def sum_(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.value.shape

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _node(np.sum(a.value, axis=axis, keepdims=keepdims), (a,), backward)


def mean(a, axis=None, keepdims=False):
    n = value(a).size if axis is None else value(a).shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


def leaky_relu(a, slope):
    # valid for 0 <= slope <= 1
    if not isinstance(a, Var):
        return np.maximum(a, slope * a)
    av = a.value
    out = np.maximum(av, slope * av)
    return _node(out, (a,), lambda g: (np.where(av > 0, g, slope * g),))


def clip(a, lo, hi):
    """Clamp to ``[lo, hi]``; zero gradient outside the open interval."""
    if not isinstance(a, Var):
        return np.clip(a, lo, hi)
    av = a.value
    inside = (av >= lo) & (av <= hi)
    return _node(np.clip(av, lo, hi), (a,), lambda g: (g * inside,))


def transpose(a):
    if not isinstance(a, Var):
        return np.transpose(a)
    return _node(a.value.T, (a,), lambda g: (g.T,))


def reshape(a, shape):
    if not isinstance(a, Var):
        return np.reshape(a, shape)
    old = a.value.shape
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def getitem(a, idx):
    if not isinstance(a, Var):
        return a[idx]
    shape = a.value.shape

    def backward(g):
        full = np.zeros(shape)
        np.add.at(full, idx, g)
        return (full,)

    return _node(a.value[idx], (a,), backward)


def concat(parts, axis=0):
    if not _any_var(*parts):
        return np.concatenate(parts, axis=axis)
    vals = [value(p) for p in parts]
    bounds = np.cumsum([v.shape[axis] for v in vals])[:-1]
    return _node(
        np.concatenate(vals, axis=axis), tuple(parts), lambda g: tuple(np.split(g, bounds, axis=axis))
    )


def _topo_order(root):
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p is not None and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(root):
    """Populate ``.grad`` on every node reachable from the scalar ``root``."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    if not np.isfinite(root.value).all():
        raise NumericError(f"loss is not finite: {float(root.value)}")
    order = _topo_order(root)
    for node in order:
        node.grad = None
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            if parent is None:
                continue
            parent.grad = g if parent.grad is None else parent.grad + g
