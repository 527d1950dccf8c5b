"""Tape-based reverse-mode autodiff over float64 numpy arrays.

Every op result records its parents, a backward closure and a monotonically
increasing node id.  ``backward`` gathers the subgraph reachable from the
loss and replays the closures in descending node-id order, which is a valid
reverse topological order because a node is always created after its
inputs.  Graphs are rebuilt on every forward pass; gradients accumulate into
the ``grad`` of leaf tensors until :meth:`Tensor.zero_grad` is called.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager

import numpy as np

from .errors import NonFiniteError, NotScalar, ShapeMismatch

_ids = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, n in enumerate(shape):
        if n == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.node_id = next(_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def __len__(self) -> int:
        return len(self.data)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    # -- graph construction -------------------------------------------------

    def backward(self) -> None:
        backward(self)

    def __add__(self, other):
        other = _lift(other)
        a, b = self, other

        def grads(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

        return record(a.data + b.data, (a, b), grads, "add")

    __radd__ = __add__

    def __sub__(self, other):
        other = _lift(other)
        a, b = self, other

        def grads(g):
            return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

        return record(a.data - b.data, (a, b), grads, "sub")

    def __rsub__(self, other):
        return _lift(other) - self

    def __neg__(self):
        return record(-self.data, (self,), lambda g: (-g,), "neg")

    def __mul__(self, other):
        other = _lift(other)
        a, b = self, other

        def grads(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

        return record(a.data * b.data, (a, b), grads, "mul")

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            return self * other ** -1.0
        return self * (1.0 / other)

    def __pow__(self, exponent: float):
        x = self.data
        return record(x**exponent, (self,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")

    def __matmul__(self, other):
        a, b = self, _lift(other)
        if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
            raise ShapeMismatch(f"matmul {a.shape} @ {b.shape}")

        def grads(g):
            ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
            gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
            return ga, gb

        return record(a.data @ b.data, (a, b), grads, "matmul")

    def sum(self, axis=None, keepdims: bool = False):
        shape = self.shape

        def grads(g):
            if axis is not None and not keepdims:
                g = np.expand_dims(g, axis)
            return (np.broadcast_to(g, shape).copy(),)

        return record(self.data.sum(axis=axis, keepdims=keepdims), (self,), grads, "sum")

    def mean(self, axis=None, keepdims: bool = False):
        n = self.data.size if axis is None else np.prod([self.shape[a] for a in np.atleast_1d(axis)])
        return self.sum(axis=axis, keepdims=keepdims) * (1.0 / n)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        old = self.shape
        return record(self.data.reshape(shape), (self,), lambda g: (g.reshape(old),), "reshape")

    def transpose(self, *axes):
        axes = tuple(axes) or tuple(reversed(range(self.ndim)))
        inv = np.argsort(axes)
        return record(self.data.transpose(axes), (self,), lambda g: (g.transpose(inv),), "transpose")

    def __getitem__(self, idx):
        shape = self.shape

        def grads(g):
            out = np.zeros(shape)
            np.add.at(out, idx, g)
            return (out,)

        return record(self.data[idx], (self,), grads, "getitem")


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite values produced by {op}")


def record(data, parents, grads_fn, op: str) -> Tensor:
    """Wrap an op result, registering it on the tape when any parent needs grad.

    ``grads_fn(g)`` receives the upstream gradient and returns one array (or
    None) per parent.
    """
    data = np.asarray(data, dtype=np.float64)
    check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.node_id = next(_ids)
    out.op = op
    out.requires_grad = _grad_enabled and any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = grads_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def stack(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]

    def grads(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return record(np.stack([t.data for t in tensors], axis=axis), tensors, grads, "stack")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = [_lift(t) for t in tensors]
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def grads(g):
        return tuple(np.split(g, bounds, axis=axis))

    return record(np.concatenate([t.data for t in tensors], axis=axis), tensors, grads, "concat")


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``grad`` of every reachable leaf."""
    if loss.data.size != 1:
        raise NotScalar(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    nodes = {}
    stack_ = [loss]
    while stack_:
        node = stack_.pop()
        if node.node_id in nodes:
            continue
        nodes[node.node_id] = node
        stack_.extend(p for p in node._parents if p.requires_grad)

    upstream = {loss.node_id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = upstream.pop(nid, None)
        if g is None:
            continue
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = upstream.get(parent.node_id)
            upstream[parent.node_id] = pg if prev is None else prev + pg
