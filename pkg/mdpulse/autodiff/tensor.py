"""
Reverse-mode autodiff on float64 NumPy arrays.

Each op builds an output Tensor holding its parents in `_prev` and a
`_backward` closure that adds the op's vector-Jacobian product into the
parents' `.grad`. `backward()` walks the graph in reverse topological order.
Every forward value and every propagated gradient is checked for NaN/Inf.
"""

from typing import Sequence

import numpy as np
from scipy.special import expit

from mdpulse.errors import NonFiniteValue, ShapeMismatch


def check_finite(values: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(values)):
        raise NonFiniteValue(f"{what} produced non-finite values")


def unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to `shape`."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        check_finite(self.data, name or "tensor")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name
        self._backward = None
        self._prev = ()

    def __repr__(self) -> str:
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, requires_grad={self.requires_grad})"

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        check_finite(grad, f"gradient of {self.name or 'tensor'}")
        self.grad = grad if self.grad is None else self.grad + grad

    def backward(self, grad=None) -> None:
        if grad is None:
            if self.data.size != 1:
                raise ShapeMismatch("backward() without a seed gradient needs a scalar")
            grad = np.ones_like(self.data)
        grad = np.asarray(grad, dtype=np.float64)
        if grad.shape != self.shape:
            raise ShapeMismatch(f"seed gradient {grad.shape} != tensor {self.shape}")

        # Iterative post-order DFS; unrolled recurrences are too deep to recurse.
        topo, visited = [], set()
        stack = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in node._prev:
                if parent.requires_grad and id(parent) not in visited:
                    stack.append((parent, False))

        self._accumulate(grad)
        for node in reversed(topo):
            if node._backward is None or node.grad is None:
                continue
            node._backward(node.grad)
            # Intermediate gradients are not needed once pushed to parents.
            node.grad = None

    # -- elementwise arithmetic -------------------------------------------------

    def __add__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def _backward(g):
            a._accumulate(unbroadcast(g, a.shape))
            b._accumulate(unbroadcast(g, b.shape))

        return result_tensor(a.data + b.data, (a, b), _backward, "add")

    __radd__ = __add__

    def __neg__(self):
        a = self

        def _backward(g):
            a._accumulate(-g)

        return result_tensor(-a.data, (a,), _backward, "neg")

    def __sub__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def _backward(g):
            a._accumulate(unbroadcast(g, a.shape))
            b._accumulate(unbroadcast(-g, b.shape))

        return result_tensor(a.data - b.data, (a, b), _backward, "sub")

    def __rsub__(self, other):
        return as_tensor(other) - self

    def __mul__(self, other):
        other = as_tensor(other)
        a, b = self, other

        def _backward(g):
            a._accumulate(unbroadcast(g * b.data, a.shape))
            b._accumulate(unbroadcast(g * a.data, b.shape))

        return result_tensor(a.data * b.data, (a, b), _backward, "mul")

    __rmul__ = __mul__

    def __matmul__(self, other):
        other = as_tensor(other)
        a, b = self, other
        if a.ndim < 2 or b.ndim < 2:
            raise ShapeMismatch("matmul needs operands with at least 2 dims")
        if a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

        def _backward(g):
            a._accumulate(unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
            b._accumulate(unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

        return result_tensor(np.matmul(a.data, b.data), (a, b), _backward, "matmul")

    # -- shape ------------------------------------------------------------------

    def __getitem__(self, key):
        a = self

        def _backward(g):
            full = np.zeros_like(a.data)
            np.add.at(full, key, g)
            a._accumulate(full)

        return result_tensor(np.array(a.data[key]), (a,), _backward, "getitem")

    def reshape(self, *shape):
        a = self

        def _backward(g):
            a._accumulate(g.reshape(a.shape))

        return result_tensor(a.data.reshape(*shape), (a,), _backward, "reshape")

    def sum(self):
        a = self

        def _backward(g):
            a._accumulate(np.broadcast_to(g, a.shape).copy())

        return result_tensor(np.asarray(a.data.sum()), (a,), _backward, "sum")

    def mean(self):
        return self.sum() * (1.0 / self.data.size)


def as_tensor(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def result_tensor(data, parents, backward, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=np.float64)
    check_finite(out.data, op)
    out.requires_grad = any(p.requires_grad for p in parents)
    out.grad = None
    out.name = op
    if out.requires_grad:
        out._prev = tuple(parents)
        out._backward = backward
    else:
        out._prev = ()
        out._backward = None
    return out


def sigmoid(x: Tensor) -> Tensor:
    y = expit(x.data)

    def _backward(g):
        x._accumulate(g * y * (1.0 - y))

    return result_tensor(y, (x,), _backward, "sigmoid")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)

    def _backward(g):
        x._accumulate(g * (1.0 - y * y))

    return result_tensor(y, (x,), _backward, "tanh")


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]

    def _backward(g):
        for t, piece in zip(tensors, np.split(g, bounds, axis=axis)):
            t._accumulate(piece)

    data = np.concatenate([t.data for t in tensors], axis=axis)
    return result_tensor(data, tensors, _backward, "concat")


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]

    def _backward(g):
        for i, t in enumerate(tensors):
            t._accumulate(np.take(g, i, axis=axis))

    data = np.stack([t.data for t in tensors], axis=axis)
    return result_tensor(data, tensors, _backward, "stack")


def linear(x: Tensor, weight: Tensor, bias: Tensor = None) -> Tensor:
    """x[..., F] @ weight[F, U] + bias[U]."""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeMismatch(f"linear input width {x.shape[-1]} != weight rows {weight.shape[0]}")
    if bias is not None and bias.shape != (weight.shape[1],):
        raise ShapeMismatch(f"bias {bias.shape} does not match {weight.shape[1]} outputs")
    n_in, n_out = weight.shape
    data = np.matmul(x.data, weight.data)
    if bias is not None:
        data = data + bias.data
    parents = (x, weight) if bias is None else (x, weight, bias)

    def _backward(g):
        x._accumulate(np.matmul(g, weight.data.T))
        flat_g = g.reshape(-1, n_out)
        weight._accumulate(x.data.reshape(-1, n_in).T @ flat_g)
        if bias is not None:
            bias._accumulate(flat_g.sum(axis=0))

    return result_tensor(data, parents, _backward, "linear")
