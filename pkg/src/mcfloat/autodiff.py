"""Reverse-mode differentiation over working-precision arrays.

A :class:`Var` holds a standard array.  Vars produced by MC layers also carry
the :class:`~mcfloat.mct.MCTensor` they were evaluated from (``Var.mc``), and
leaves built with :func:`param` point at an MC parameter.  Backward passes
evaluate every Jacobian at the evaluated sum of its MC operands and add the
result into ``MCTensor.grad`` of each parameter leaf.
"""

from __future__ import annotations

import numpy as np

from .mct import MCTensor, approx

__all__ = ["Var", "param", "const", "backward", "unbroadcast"]


class Var:
    __array_priority__ = 1000

    def __init__(self, value, parents=(), backward=None, mc: MCTensor | None = None,
                 leaf: MCTensor | None = None, requires_grad: bool | None = None):
        self.value = np.asarray(value)
        self.parents = tuple(parents)
        self._backward = backward
        self.mc = mc
        self.leaf = leaf
        if requires_grad is None:
            requires_grad = leaf is not None or any(p.requires_grad for p in self.parents)
        self.requires_grad = requires_grad
        self.grad = None

    # shape helpers
    @property
    def shape(self):
        return self.value.shape

    @property
    def dtype(self):
        return self.value.dtype

    @property
    def ndim(self):
        return self.value.ndim

    def __repr__(self):
        return f"Var(shape={self.shape}, dtype={self.dtype})"

    def backward(self):
        backward(self)

    # arithmetic (defined in terms of the functions below)
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

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return index(self, key)

    def sum(self, axis=None):
        return vsum(self, axis)

    def mean(self, axis=None):
        return mean(self, axis)

    @property
    def T(self):
        return transpose(self)


def param(x: MCTensor) -> Var:
    """Leaf for an MC parameter; its value is the evaluated sum."""
    return Var(approx(x), leaf=x, mc=x)


def const(value, dtype=None) -> Var:
    if isinstance(value, Var):
        return value
    value = np.asarray(value, dtype=dtype)
    return Var(value, requires_grad=False)


def _lift(x, like: Var | None = None) -> Var:
    if isinstance(x, Var):
        return x
    if isinstance(x, MCTensor):
        return Var(approx(x), mc=x, requires_grad=False)
    if like is not None and np.ndim(x) == 0 and not isinstance(x, np.ndarray):
        # python scalars stay weak so they do not promote the working dtype
        return Var(np.asarray(x, dtype=like.dtype), requires_grad=False)
    return const(x)


def unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    if g.shape == tuple(shape):
        return g
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, n in enumerate(shape):
        if n == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def backward(loss: Var) -> None:
    """Propagate d(loss)/d(leaf) to every leaf; MC parameters accumulate into ``.grad``."""
    if not isinstance(loss, Var):
        raise TypeError("backward expects a Var")
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    order, seen = [], set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        stack.extend((p, False) for p in node.parents)
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node.parents:
            _deposit(node, g)
            continue
        for p, gp in zip(node.parents, node._backward(g)):
            if gp is None or not p.requires_grad:
                continue
            gp = unbroadcast(np.asarray(gp), p.shape).astype(p.dtype, copy=False)
            prev = grads.get(id(p))
            grads[id(p)] = gp if prev is None else prev + gp


def _deposit(node: Var, g):
    node.grad = g if node.grad is None else node.grad + g
    if node.leaf is not None:
        t = node.leaf
        g = np.asarray(g, dtype=t.dtype).reshape(t.shape)
        t.grad = g.copy() if t.grad is None else t.grad + g


# ------------------------------------------------------------------ ops

def _binary(a, b):
    if not isinstance(a, Var):
        a = _lift(a, b)
    b = _lift(b, a)
    return a, b


def add(a, b) -> Var:
    a, b = _binary(a, b)
    return Var(a.value + b.value, (a, b), lambda g: (g, g))


def sub(a, b) -> Var:
    a, b = _binary(a, b)
    return Var(a.value - b.value, (a, b), lambda g: (g, -g))


def mul(a, b) -> Var:
    a, b = _binary(a, b)
    av, bv = a.value, b.value
    return Var(av * bv, (a, b), lambda g: (g * bv, g * av))


def div(a, b) -> Var:
    a, b = _binary(a, b)
    av, bv = a.value, b.value
    out = av / bv
    return Var(out, (a, b), lambda g: (g / bv, -g * out / bv))


def matmul(a, b) -> Var:
    """Product of standard-valued Vars (use the MC layers for MC operands)."""
    a, b = _binary(a, b)
    av, bv = a.value, b.value

    def back(g):
        if av.ndim == 1 and bv.ndim == 1:
            return g * bv, g * av
        if bv.ndim == 1:
            return np.outer(g, bv) if av.ndim == 2 else g[..., None] * bv, np.swapaxes(av, -1, -2) @ g
        if av.ndim == 1:
            return bv @ g, np.outer(av, g)
        return g @ np.swapaxes(bv, -1, -2), np.swapaxes(av, -1, -2) @ g

    return Var(av @ bv, (a, b), back)


def vsum(a: Var, axis=None, keepdims=False) -> Var:
    a = _lift(a)
    shape = a.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Var(a.value.sum(axis=axis, keepdims=keepdims), (a,), back)


def mean(a: Var, axis=None) -> Var:
    a = _lift(a)
    n = a.value.size if axis is None else np.prod([a.shape[i] for i in np.atleast_1d(axis)])
    return vsum(a, axis) * (1.0 / float(n))


def transpose(a: Var) -> Var:
    return Var(np.swapaxes(a.value, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),))


def reshape(a: Var, shape) -> Var:
    old = a.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(old),))


def index(a: Var, key) -> Var:
    shape = a.shape

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        np.add.at(out, key, g)
        return (out,)

    return Var(a.value[key], (a,), back)


def concat(vs, axis=0) -> Var:
    vs = [_lift(v) for v in vs]
    sizes = np.cumsum([v.shape[axis] for v in vs])[:-1]
    return Var(np.concatenate([v.value for v in vs], axis=axis), vs,
               lambda g: tuple(np.split(g, sizes, axis=axis)))


def _unary(fn, dfn):
    def op(a):
        a = _lift(a)
        out = fn(a.value)
        return Var(out, (a,), lambda g: (g * dfn(a.value, out),))
    return op


exp = _unary(np.exp, lambda x, y: y)
log = _unary(np.log, lambda x, y: 1 / x)
log1p = _unary(np.log1p, lambda x, y: 1 / (1 + x))
sqrt = _unary(np.sqrt, lambda x, y: 0.5 / y)
square = _unary(np.square, lambda x, y: 2 * x)
tanh = _unary(np.tanh, lambda x, y: 1 - y * y)
