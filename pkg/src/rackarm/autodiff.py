"""Minimal reverse-mode differentiation on numpy arrays.

Just enough machinery for the correction network and the differentiable
chain recomposition: broadcast-aware arithmetic, matmul, the activations
and reductions the model uses, and elementwise Huber.  Everything is
float64.  Graphs are built eagerly; calling ``backward()`` on a scalar
walks the tape once in reverse topological order.
"""

from __future__ import annotations

import numpy as np
from scipy.special import erf

_INV_SQRT2 = 1.0 / np.sqrt(2.0)
_INV_SQRT2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a gradient back down to the shape it was broadcast from."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """Array node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or any(p.requires_grad for p in parents)
        self._parents = tuple(parents) if self.requires_grad else ()
        self._backward = backward if self.requires_grad else None

    # -- basic introspection ------------------------------------------------
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
        return f"Tensor(shape={self.data.shape}, grad={'set' if self.grad is not None else 'none'})"

    def _accumulate(self, grad: np.ndarray):
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(grad, dtype=np.float64, copy=True)
        else:
            self.grad += grad

    def backward(self):
        """Reverse pass from a scalar; fills ``grad`` on requires_grad leaves."""
        if self.data.size != 1:
            raise ValueError("backward() requires a scalar loss tensor")
        order: list[Tensor] = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if id(node) in seen:
                continue
            if expanded:
                seen.add(id(node))
                order.append(node)
            else:
                stack.append((node, True))
                for parent in node._parents:
                    if id(parent) not in seen and parent.requires_grad:
                        stack.append((parent, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other):
        other = as_tensor(other)

        def back(g):
            self._accumulate(_unbroadcast(g, self.shape))
            other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(self.data + other.data, parents=(self, other), backward=back)

    __radd__ = __add__

    def __mul__(self, other):
        other = as_tensor(other)

        def back(g):
            self._accumulate(_unbroadcast(g * other.data, self.shape))
            other._accumulate(_unbroadcast(g * self.data, other.shape))

        return Tensor(self.data * other.data, parents=(self, other), backward=back)

    __rmul__ = __mul__

    def __neg__(self):
        def back(g):
            self._accumulate(-g)

        return Tensor(-self.data, parents=(self,), backward=back)

    def __sub__(self, other):
        return self + (-as_tensor(other))

    def __rsub__(self, other):
        return as_tensor(other) + (-self)

    def __pow__(self, exponent: float):
        def back(g):
            self._accumulate(g * exponent * self.data ** (exponent - 1.0))

        return Tensor(self.data**exponent, parents=(self,), backward=back)

    def __matmul__(self, other):
        other = as_tensor(other)

        def back(g):
            self._accumulate(_unbroadcast(g @ np.swapaxes(other.data, -1, -2), self.shape))
            other._accumulate(_unbroadcast(np.swapaxes(self.data, -1, -2) @ g, other.shape))

        return Tensor(self.data @ other.data, parents=(self, other), backward=back)

    def __getitem__(self, key):
        def back(g):
            full = np.zeros_like(self.data)
            np.add.at(full, key, g)
            self._accumulate(full)

        return Tensor(self.data[key], parents=(self,), backward=back)

    # -- shape manipulation ---------------------------------------------------
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])

        def back(g):
            self._accumulate(g.reshape(self.shape))

        return Tensor(self.data.reshape(shape), parents=(self,), backward=back)

    def sum(self, axis=None, keepdims: bool = False):
        def back(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape).copy())
                return
            if not keepdims:
                g = np.expand_dims(g, axis)
            self._accumulate(np.broadcast_to(g, self.shape).copy())

        return Tensor(
            self.data.sum(axis=axis, keepdims=keepdims), parents=(self,), backward=back
        )

    def mean(self, axis=None, keepdims: bool = False):
        if axis is None:
            count = self.data.size
        else:
            count = self.data.shape[axis]
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / count)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


# -- activations -------------------------------------------------------------


def tanh(t: Tensor) -> Tensor:
    out_data = np.tanh(t.data)

    def back(g):
        t._accumulate(g * (1.0 - out_data * out_data))

    return Tensor(out_data, parents=(t,), backward=back)


def sigmoid(t: Tensor) -> Tensor:
    out_data = 0.5 * (1.0 + np.tanh(0.5 * t.data))  # stable logistic

    def back(g):
        t._accumulate(g * out_data * (1.0 - out_data))

    return Tensor(out_data, parents=(t,), backward=back)


def gelu(t: Tensor) -> Tensor:
    """Exact (erf-form) GELU: x * Phi(x)."""
    x = t.data
    cdf = 0.5 * (1.0 + erf(x * _INV_SQRT2))

    def back(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * x * x)
        t._accumulate(g * (cdf + x * pdf))

    return Tensor(x * cdf, parents=(t,), backward=back)


def cos(t: Tensor) -> Tensor:
    def back(g):
        t._accumulate(-g * np.sin(t.data))

    return Tensor(np.cos(t.data), parents=(t,), backward=back)


def sin(t: Tensor) -> Tensor:
    def back(g):
        t._accumulate(g * np.cos(t.data))

    return Tensor(np.sin(t.data), parents=(t,), backward=back)


def huber(t: Tensor, delta: float) -> Tensor:
    """Elementwise Huber value: quadratic inside |x| <= delta, linear outside."""
    x = t.data
    a = np.abs(x)
    quad = a <= delta
    out_data = np.where(quad, 0.5 * x * x, delta * (a - 0.5 * delta))

    def back(g):
        t._accumulate(g * np.where(quad, x, delta * np.sign(x)))

    return Tensor(out_data, parents=(t,), backward=back)


# -- structure ----------------------------------------------------------------


def concat(tensors, axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.data.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def back(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            t._accumulate(piece)

    return Tensor(
        np.concatenate([t.data for t in tensors], axis=axis),
        parents=tuple(tensors),
        backward=back,
    )


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def back(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    return Tensor(
        np.stack([t.data for t in tensors], axis=axis),
        parents=tuple(tensors),
        backward=back,
    )


def layer_norm(t: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize along the last axis, then scale and shift."""
    mu = t.mean(axis=-1, keepdims=True)
    centered = t - mu
    var = (centered * centered).mean(axis=-1, keepdims=True)
    inv = (var + eps) ** -0.5
    return centered * inv * gain + bias
