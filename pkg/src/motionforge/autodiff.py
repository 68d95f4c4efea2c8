"""Reverse-mode automatic differentiation over numpy arrays.

A Var wraps an ndarray and records, per operation, how to push a gradient
back to its operands. Calling backward() on a scalar loss walks the graph
in reverse topological order and accumulates gradients into every leaf.

The op helpers (matmul, silu, concat, ...) accept plain ndarrays as well
and then skip graph construction entirely, so inference code can share
one forward implementation with training at full numpy speed.
"""

from __future__ import annotations

import numpy as np

__all__ = [
    "Var", "backward", "concat", "clip", "exp", "log", "matmul", "mean",
    "minimum", "silu", "sigmoid", "sum_", "tanh",
]


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient down to the shape the operand had before broadcasting."""
    grad = np.asarray(grad)
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Var:
    """A node in the gradient tape."""

    __slots__ = ("value", "grad", "_edges")

    # Make numpy defer mixed ndarray-op-Var expressions to our reflected
    # operators instead of building object arrays elementwise.
    __array_ufunc__ = None

    def __init__(self, value, _edges=()):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self._edges = _edges  # tuple of (parent Var, vjp callable)

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def detach(self) -> np.ndarray:
        return self.value

    # -- graph construction ------------------------------------------------

    @staticmethod
    def _node(value, *edges) -> "Var":
        kept = tuple((p, fn) for p, fn in edges if isinstance(p, Var))
        return Var(value, kept)

    def backward(self, seed=None) -> None:
        """Accumulate gradients of this node into every ancestor's .grad."""
        if seed is None:
            if self.value.size != 1:
                raise ValueError("backward() on a non-scalar needs a seed")
            seed = np.ones_like(self.value)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for parent, _ in node._edges:
                if id(parent) not in seen:
                    stack.append((parent, False))
        grads = {id(self): np.asarray(seed, dtype=np.float64)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            node.grad = g if node.grad is None else node.grad + g
            for parent, vjp in node._edges:
                contribution = vjp(g)
                if id(parent) in grads:
                    grads[id(parent)] = grads[id(parent)] + contribution
                else:
                    grads[id(parent)] = np.asarray(contribution,
                                                   dtype=np.float64)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        a, b = self.value, _value(other)
        return Var._node(a + b,
                         (self, lambda g: _unbroadcast(g, a.shape)),
                         (other, lambda g: _unbroadcast(g, b.shape)))

    __radd__ = __add__

    def __sub__(self, other):
        a, b = self.value, _value(other)
        return Var._node(a - b,
                         (self, lambda g: _unbroadcast(g, a.shape)),
                         (other, lambda g: _unbroadcast(-g, b.shape)))

    def __rsub__(self, other):
        a, b = _value(other), self.value
        return Var._node(a - b,
                         (other, lambda g: _unbroadcast(g, a.shape)),
                         (self, lambda g: _unbroadcast(-g, b.shape)))

    def __mul__(self, other):
        a, b = self.value, _value(other)
        return Var._node(a * b,
                         (self, lambda g: _unbroadcast(g * b, a.shape)),
                         (other, lambda g: _unbroadcast(g * a, b.shape)))

    __rmul__ = __mul__

    def __neg__(self):
        return Var._node(-self.value, (self, lambda g: -g))

    def __truediv__(self, other):
        a, b = self.value, _value(other)
        return Var._node(a / b,
                         (self, lambda g: _unbroadcast(g / b, a.shape)),
                         (other, lambda g: _unbroadcast(-g * a / (b * b),
                                                        b.shape)))

    def __rtruediv__(self, other):
        a, b = _value(other), self.value
        return Var._node(a / b,
                         (other, lambda g: _unbroadcast(g / b, a.shape)),
                         (self, lambda g: _unbroadcast(-g * a / (b * b),
                                                       b.shape)))

    def __pow__(self, exponent):
        if isinstance(exponent, Var):
            raise TypeError("only constant exponents are supported")
        a = self.value
        out = a ** exponent
        return Var._node(out,
                         (self, lambda g: g * exponent * a ** (exponent - 1)))

    def __matmul__(self, other):
        a, b = self.value, _value(other)
        return Var._node(a @ b,
                         (self, lambda g: g @ np.swapaxes(b, -1, -2)),
                         (other, lambda g: np.swapaxes(a, -1, -2) @ g))

    def __rmatmul__(self, other):
        a, b = _value(other), self.value
        return Var._node(a @ b,
                         (other, lambda g: g @ np.swapaxes(b, -1, -2)),
                         (self, lambda g: np.swapaxes(a, -1, -2) @ g))

    def __getitem__(self, key):
        a = self.value

        def scatter(g):
            out = np.zeros_like(a)
            np.add.at(out, key, g)
            return out

        return Var._node(a[key], (self, scatter))

    # -- reductions --------------------------------------------------------

    def sum(self, axis=None):
        a = self.value

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g, a.shape).copy()
            return np.broadcast_to(np.expand_dims(g, axis), a.shape).copy()

        return Var._node(a.sum(axis=axis), (self, vjp))

    def mean(self, axis=None):
        a = self.value
        if axis is None:
            count = a.size
        elif isinstance(axis, tuple):
            count = int(np.prod([a.shape[i] for i in axis]))
        else:
            count = a.shape[axis]

        def vjp(g):
            if axis is None:
                return np.broadcast_to(g / count, a.shape).copy()
            return np.broadcast_to(np.expand_dims(g, axis) / count,
                                   a.shape).copy()

        return Var._node(a.mean(axis=axis), (self, vjp))

    def reshape(self, *shape):
        a = self.value
        return Var._node(a.reshape(*shape),
                         (self, lambda g: g.reshape(a.shape)))


def _value(x):
    return x.value if isinstance(x, Var) else np.asarray(x, dtype=np.float64)


def _any_var(*items):
    return any(isinstance(x, Var) for x in items)


# -- dual-use op helpers (Var builds a graph, ndarray stays plain numpy) ---


def matmul(a, b):
    if isinstance(a, Var):
        return a @ b
    if isinstance(b, Var):
        return b.__rmatmul__(a)
    return a @ b


def sigmoid(x):
    if isinstance(x, Var):
        s = 1.0 / (1.0 + np.exp(-x.value))
        return Var._node(s, (x, lambda g: g * s * (1.0 - s)))
    return 1.0 / (1.0 + np.exp(-x))


def silu(x):
    """x * sigmoid(x), the denoiser's hidden activation."""
    if isinstance(x, Var):
        s = 1.0 / (1.0 + np.exp(-x.value))
        out = x.value * s
        return Var._node(out,
                         (x, lambda g: g * s * (1.0 + x.value * (1.0 - s))))
    s = 1.0 / (1.0 + np.exp(-x))
    return x * s


def tanh(x):
    if isinstance(x, Var):
        t = np.tanh(x.value)
        return Var._node(t, (x, lambda g: g * (1.0 - t * t)))
    return np.tanh(x)


def exp(x):
    if isinstance(x, Var):
        e = np.exp(x.value)
        return Var._node(e, (x, lambda g: g * e))
    return np.exp(x)


def log(x):
    if isinstance(x, Var):
        return Var._node(np.log(x.value), (x, lambda g: g / x.value))
    return np.log(x)


def clip(x, low, high):
    """Clamp with ones for the in-range gradient, zeros outside."""
    if isinstance(x, Var):
        inside = (x.value >= low) & (x.value <= high)
        return Var._node(np.clip(x.value, low, high),
                         (x, lambda g: g * inside))
    return np.clip(x, low, high)


def minimum(a, b):
    if _any_var(a, b):
        av, bv = _value(a), _value(b)
        take_a = av <= bv
        return Var._node(np.minimum(av, bv),
                         (a, lambda g: _unbroadcast(g * take_a, av.shape)),
                         (b, lambda g: _unbroadcast(g * ~take_a, bv.shape)))
    return np.minimum(a, b)


def concat(items, axis=-1):
    if _any_var(*items):
        values = [_value(x) for x in items]
        out = np.concatenate(values, axis=axis)
        sizes = [v.shape[axis] for v in values]
        offsets = np.cumsum([0] + sizes)

        def edge(i):
            lo, hi = offsets[i], offsets[i + 1]
            index = [slice(None)] * out.ndim
            index[axis if axis >= 0 else out.ndim + axis] = slice(lo, hi)
            index = tuple(index)
            return lambda g: g[index]

        edges = [(items[i], edge(i)) for i in range(len(items))]
        return Var._node(out, *edges)
    return np.concatenate(items, axis=axis)


def sum_(x, axis=None):
    if isinstance(x, Var):
        return x.sum(axis=axis)
    return np.sum(x, axis=axis)


def mean(x, axis=None):
    if isinstance(x, Var):
        return x.mean(axis=axis)
    return np.mean(x, axis=axis)


def backward(loss: Var) -> None:
    loss.backward()


def finite_difference(func, arrays: "list[np.ndarray]",
                      step: float = 1e-6) -> "list[np.ndarray]":
    """Central-difference gradients of func(arrays) for gradient checks."""
    grads = []
    for k, base in enumerate(arrays):
        grad = np.zeros_like(base, dtype=np.float64)
        flat = grad.reshape(-1)
        for i in range(base.size):
            bumped = [a.copy() for a in arrays]
            bumped[k].reshape(-1)[i] += step
            hi = func(bumped)
            bumped[k].reshape(-1)[i] -= 2 * step
            lo = func(bumped)
            flat[i] = (hi - lo) / (2 * step)
        grads.append(grad)
    return grads
