"""Minimal vectorised reverse-mode automatic differentiation on numpy.

Every value is a float64 ndarray wrapped in a :class:`Tensor`.  Operations
record their parents and a backward closure; calling ``backward()`` on a
scalar output runs the tape in reverse topological order.  Only the ops the
field / renderer / losses need are provided, nothing speculative.

Graph recording is skipped entirely when no input requires gradients (or
inside :func:`no_grad`), so the same forward code serves both training and
plain inference.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were size-1 in the original
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    # ndarray <op> Tensor must fall back to our reflected ops, not build
    # an object array element-wise
    __array_ufunc__ = None

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    # -- construction helpers -------------------------------------------

    @staticmethod
    def _result(data, parents, backward):
        out = Tensor(data)
        if _GRAD_ENABLED and any(p.requires_grad for p in parents):
            out.requires_grad = True
            out._parents = tuple(parents)
            out._backward = backward
        return out

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- autodiff core ---------------------------------------------------

    def _accumulate(self, g: np.ndarray):
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar output")
        # deterministic reverse topological order
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
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic --------------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g, b.data.shape))

        return Tensor._result(self.data + other.data, (self, other), bwd)

    __radd__ = __add__

    def __neg__(self):
        def bwd(g, a=self):
            a._accumulate(-g)

        return Tensor._result(-self.data, (self,), bwd)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __mul__(self, other):
        other = as_tensor(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g * b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(g * a.data, b.data.shape))

        return Tensor._result(self.data * other.data, (self, other), bwd)

    __rmul__ = __mul__

    def __truediv__(self, other):
        other = as_tensor(other)

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(_unbroadcast(g / b.data, a.data.shape))
            if b.requires_grad:
                b._accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.data.shape))

        return Tensor._result(self.data / other.data, (self, other), bwd)

    def __rtruediv__(self, other):
        return as_tensor(other) / self

    def __pow__(self, exponent):
        if not np.isscalar(exponent):
            raise TypeError("only scalar exponents are supported")

        def bwd(g, a=self, n=exponent):
            a._accumulate(g * n * a.data ** (n - 1))

        return Tensor._result(self.data ** exponent, (self,), bwd)

    def __matmul__(self, other):
        other = as_tensor(other)
        if self.data.ndim != 2 or other.data.ndim != 2:
            raise ValueError("matmul supports 2-D operands only")

        def bwd(g, a=self, b=other):
            if a.requires_grad:
                a._accumulate(g @ b.data.T)
            if b.requires_grad:
                b._accumulate(a.data.T @ g)

        return Tensor._result(self.data @ other.data, (self, other), bwd)

    # -- indexing / shaping ------------------------------------------------

    def __getitem__(self, idx):
        def bwd(g, a=self, idx=idx):
            buf = np.zeros_like(a.data)
            np.add.at(buf, idx, g)
            a._accumulate(buf)

        return Tensor._result(self.data[idx], (self,), bwd)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def bwd(g, a=self):
            a._accumulate(g.reshape(a.data.shape))

        return Tensor._result(self.data.reshape(shape), (self,), bwd)

    # -- reductions ----------------------------------------------------------

    def sum(self, axis=None, keepdims: bool = False):
        def bwd(g, a=self, axis=axis, keepdims=keepdims):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accumulate(np.broadcast_to(g, a.data.shape).copy())

        return Tensor._result(self.data.sum(axis=axis, keepdims=keepdims), (self,), bwd)

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            n = self.data.size
        elif isinstance(axis, tuple):
            n = int(np.prod([self.data.shape[i] for i in axis]))
        else:
            n = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) / float(n)

    def cumsum(self, axis: int):
        def bwd(g, a=self, axis=axis):
            rev = np.flip(g, axis=axis)
            a._accumulate(np.flip(np.cumsum(rev, axis=axis), axis=axis))

        return Tensor._result(np.cumsum(self.data, axis=axis), (self,), bwd)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def wrap(x):
    """(tensor, was_tensor) so mixed-input ops can return the caller's kind."""
    return (x, True) if isinstance(x, Tensor) else (Tensor(x), False)


def unwrap(t: Tensor, keep: bool):
    return t if keep else t.data


# -- elementwise functions ---------------------------------------------------


def exp(x) -> Tensor:
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def bwd(g, a=x, y=out_data):
        a._accumulate(g * y)

    return Tensor._result(out_data, (x,), bwd)


def log(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g, a=x):
        a._accumulate(g / a.data)

    return Tensor._result(np.log(x.data), (x,), bwd)


def sin(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g, a=x):
        a._accumulate(g * np.cos(a.data))

    return Tensor._result(np.sin(x.data), (x,), bwd)


def cos(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g, a=x):
        a._accumulate(-g * np.sin(a.data))

    return Tensor._result(np.cos(x.data), (x,), bwd)


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    # tanh form is stable for large |x|
    s = 0.5 * (np.tanh(0.5 * x.data) + 1.0)

    def bwd(g, a=x, s=s):
        a._accumulate(g * s * (1.0 - s))

    return Tensor._result(s, (x,), bwd)


def softplus(x) -> Tensor:
    x = as_tensor(x)
    # max(x,0) + log1p(exp(-|x|)) is stable and much cheaper than logaddexp
    e = np.exp(-np.abs(x.data))
    out_data = np.maximum(x.data, 0.0) + np.log1p(e)

    def bwd(g, a=x, e=e):
        s = np.where(a.data >= 0.0, 1.0, e) / (1.0 + e)
        a._accumulate(g * s)

    return Tensor._result(out_data, (x,), bwd)


def absolute(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g, a=x):
        a._accumulate(g * np.sign(a.data))

    return Tensor._result(np.abs(x.data), (x,), bwd)


def relu(x) -> Tensor:
    x = as_tensor(x)

    def bwd(g, a=x):
        a._accumulate(g * (a.data > 0.0))

    return Tensor._result(np.maximum(x.data, 0.0), (x,), bwd)


def concatenate(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g, parts=tensors, splits=splits, axis=axis):
        for part, piece in zip(parts, np.split(g, splits, axis=axis)):
            if part.requires_grad:
                part._accumulate(piece)

    return Tensor._result(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd
    )
