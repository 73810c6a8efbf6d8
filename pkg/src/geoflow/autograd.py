"""Minimal reverse-mode automatic differentiation over float64 numpy arrays.

Every operation returns a new :class:`Tensor` holding references to its
parents and a closure that pushes the output gradient back into them.
:meth:`Tensor.backward` visits the graph in reverse topological order, so
each node's closure runs exactly once regardless of fan-out.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

from .errors import ContractError, ShapeError

_SQRT2 = np.sqrt(2.0)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self.name = name

    # -- construction helpers -------------------------------------------------
    @classmethod
    def _make(cls, data, parents, backward) -> Tensor:
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = any(p.requires_grad for p in parents)
        out._parents = parents if out.requires_grad else ()
        out._backward = backward if out.requires_grad else None
        out.name = None
        return out

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accum(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    # -- backward ---------------------------------------------------------------
    def backward(self) -> int:
        """Populate ``.grad`` on every reachable leaf; returns the number of nodes visited."""
        if self.data.size != 1:
            raise ContractError(f"backward needs a scalar loss, got shape {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
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
                if id(p) not in seen:
                    stack.append((p, False))
        self._accum(np.ones_like(self.data))
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
        return len(order)

    # -- elementwise arithmetic -------------------------------------------------
    def __add__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accum(_unbroadcast(g, a.shape))
            b._accum(_unbroadcast(g, b.shape))

        return Tensor._make(a.data + b.data, (a, b), back)

    __radd__ = __add__

    def __neg__(self) -> Tensor:
        a = self
        return Tensor._make(-a.data, (a,), lambda g: a._accum(-g))

    def __sub__(self, other) -> Tensor:
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> Tensor:
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accum(_unbroadcast(g * b.data, a.shape))
            b._accum(_unbroadcast(g * a.data, b.shape))

        return Tensor._make(a.data * b.data, (a, b), back)

    __rmul__ = __mul__

    def __truediv__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other

        def back(g):
            a._accum(_unbroadcast(g / b.data, a.shape))
            b._accum(_unbroadcast(-g * a.data / b.data**2, b.shape))

        return Tensor._make(a.data / b.data, (a, b), back)

    def __rtruediv__(self, other) -> Tensor:
        return as_tensor(other) / self

    def __pow__(self, p: float) -> Tensor:
        a = self
        p = float(p)
        return Tensor._make(a.data**p, (a,), lambda g: a._accum(g * p * a.data ** (p - 1)))

    def square(self) -> Tensor:
        a = self
        return Tensor._make(a.data * a.data, (a,), lambda g: a._accum(2.0 * g * a.data))

    def exp(self) -> Tensor:
        a = self
        y = np.exp(a.data)
        return Tensor._make(y, (a,), lambda g: a._accum(g * y))

    def log(self) -> Tensor:
        a = self
        return Tensor._make(np.log(a.data), (a,), lambda g: a._accum(g / a.data))

    def tanh(self) -> Tensor:
        a = self
        y = np.tanh(a.data)
        return Tensor._make(y, (a,), lambda g: a._accum(g * (1.0 - y * y)))

    def gelu(self) -> Tensor:
        """Exact GELU: x * Phi(x), Phi the standard normal CDF."""
        a = self
        x = a.data
        cdf = 0.5 * (1.0 + erf(x / _SQRT2))
        pdf = _INV_SQRT_2PI * np.exp(-0.5 * x * x)
        return Tensor._make(x * cdf, (a,), lambda g: a._accum(g * (cdf + x * pdf)))

    # -- reductions -------------------------------------------------------------
    def sum(self, axis=None, keepdims: bool = False) -> Tensor:
        a = self

        def back(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            a._accum(np.broadcast_to(g, a.shape))

        return Tensor._make(np.asarray(a.data.sum(axis=axis, keepdims=keepdims)), (a,), back)

    def mean(self, axis=None, keepdims: bool = False) -> Tensor:
        n = self.data.size if axis is None else np.prod([self.shape[i] for i in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def logsumexp(self, axis=None) -> Tensor:
        """Stable log(sum(exp(x))); entries equal to -inf contribute nothing."""
        a = self
        m = np.max(a.data, axis=axis, keepdims=True)
        m = np.where(np.isfinite(m), m, 0.0)
        s = np.sum(np.exp(a.data - m), axis=axis, keepdims=True)
        out_k = np.log(s) + m
        w = np.exp(a.data - out_k)

        def back(g):
            gk = g if axis is None else np.expand_dims(g, axis)
            a._accum(gk * w)

        out = out_k.reshape(()) if axis is None else np.squeeze(out_k, axis=axis)
        return Tensor._make(out, (a,), back)

    def softmax(self, axis: int = -1) -> Tensor:
        a = self
        z = a.data - np.max(a.data, axis=axis, keepdims=True)
        e = np.exp(z)
        y = e / e.sum(axis=axis, keepdims=True)

        def back(g):
            a._accum(y * (g - np.sum(g * y, axis=axis, keepdims=True)))

        return Tensor._make(y, (a,), back)

    # -- linear algebra and shape ----------------------------------------------
    def __matmul__(self, other) -> Tensor:
        other = as_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeError("matmul operands need at least 2 dimensions")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {a.shape} @ {b.shape}")

        def back(g):
            a._accum(_unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape))
            b._accum(_unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape))

        return Tensor._make(a.data @ b.data, (a, b), back)

    def reshape(self, *shape) -> Tensor:
        a = self
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return Tensor._make(a.data.reshape(shape), (a,), lambda g: a._accum(g.reshape(a.shape)))

    def transpose(self, *axes) -> Tensor:
        a = self
        axes = tuple(axes) if axes else tuple(reversed(range(a.ndim)))
        inv = tuple(np.argsort(axes))
        return Tensor._make(a.data.transpose(axes), (a,), lambda g: a._accum(g.transpose(inv)))

    def swapaxes(self, i: int, j: int) -> Tensor:
        axes = list(range(self.ndim))
        axes[i], axes[j] = axes[j], axes[i]
        return self.transpose(*axes)

    def __getitem__(self, idx) -> Tensor:
        a = self

        def back(g):
            full = np.zeros_like(a.data)
            np.add.at(full, idx, g)
            a._accum(full)

        return Tensor._make(a.data[idx], (a,), back)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, bounds[:-1], bounds[1:]):
            t._accum(np.take(g, np.arange(lo, hi), axis=axis))

    return Tensor._make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), back)


def mse(pred: Tensor, target) -> Tensor:
    """Batch mean of the per-sample squared L2 error (summed over non-batch axes)."""
    diff = pred - as_tensor(target)
    sq = diff.square()
    if sq.ndim > 1:
        sq = sq.reshape(sq.shape[0], -1).sum(axis=1)
    return sq.mean()
