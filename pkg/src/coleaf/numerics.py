"""Minimal reverse-mode autodiff over float64 numpy arrays.

Every operation returns a new `Tensor` holding the forward value plus enough
graph structure for `backward` to accumulate exact gradients. Tensors are
immutable after creation, so independent graphs can be evaluated in parallel.
"""
from __future__ import annotations

import itertools
import math

import numpy as np

from .errors import ContractError, DimensionError

_BCE_EPS = 1e-7

_sequence = itertools.count()


class Tensor:
    """Node in a computation graph; wraps a read-only float64 array."""

    __slots__ = ("data", "requires_grad", "_parents", "_grad_fn", "_seq")

    def __init__(self, data, requires_grad=False, _parents=(), _grad_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self._parents = _parents
        self._grad_fn = _grad_fn
        self._seq = next(_sequence)

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self):
        return float(self.data)

    def detach(self):
        """Constant view of this value; gradients never flow past it."""
        return Tensor(self.data)

    def sum(self, axis=None, keepdims=False):
        return _sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return _mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, shape):
        return _reshape(self, shape)

    def __getitem__(self, index):
        return take(self, index)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def as_tensor(value):
    return value if isinstance(value, Tensor) else Tensor(value)


def _make(data, parents, grad_fn):
    if any(p.requires_grad for p in parents):
        return Tensor(data, True, tuple(parents), grad_fn)
    return Tensor(data)


class ComputationTape:
    """Ordered record of the graph nodes reachable from one output.

    Nodes are sorted by creation sequence, which places every node after its
    parents; walking the tape in reverse therefore visits each node only
    after all of its consumers.
    """

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def trace(cls, root):
        seen = set()
        reachable = []
        stack = [root]
        while stack:
            node = stack.pop()
            if id(node) in seen:
                continue
            seen.add(id(node))
            reachable.append(node)
            stack.extend(node._parents)
        reachable.sort(key=lambda n: n._seq)
        return cls(reachable)


def backward(loss):
    """Gradients of a finite scalar w.r.t. every requires_grad tensor in its graph."""
    if loss.shape != ():
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not np.isfinite(loss.data):
        raise ContractError("backward needs a finite loss")
    if not loss.requires_grad:
        return {}
    grads = {loss: np.ones((), dtype=np.float64)}
    tape = ComputationTape.trace(loss)
    for node in reversed(tape.nodes):
        gout = grads.get(node)
        if gout is None or node._grad_fn is None:
            continue
        for parent, gpar in zip(node._parents, node._grad_fn(gout)):
            if gpar is None or not parent.requires_grad:
                continue
            if parent in grads:
                grads[parent] = grads[parent] + gpar
            else:
                grads[parent] = gpar
    return {t: g for t, g in grads.items() if t.requires_grad}


def _unbroadcast(grad, shape):
    extra = grad.ndim - len(shape)
    for _ in range(extra):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(out, (a, b), grad_fn)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(out, (a, b), grad_fn)


def neg(a):
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def grad_fn(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(out, (a, b), grad_fn)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data

    def grad_fn(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return _make(out, (a, b), grad_fn)


def matmul(a, b):
    """Matrix product of two rank-2 tensors."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul needs (m,k) by (k,n), got {a.shape} by {b.shape}")
    out = a.data @ b.data

    def grad_fn(g):
        return g @ b.data.T, a.data.T @ g

    return _make(out, (a, b), grad_fn)


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise DimensionError(f"transpose needs a rank-2 tensor, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,))


def _reshape(a, shape):
    a = as_tensor(a)
    out = a.data.reshape(shape)
    return _make(out, (a,), lambda g: (g.reshape(a.shape),))


def take(a, index):
    a = as_tensor(a)
    out = a.data[index]

    def grad_fn(g):
        acc = np.zeros(a.shape, dtype=np.float64)
        np.add.at(acc, index, g)
        return (acc,)

    return _make(out, (a,), grad_fn)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]

    def grad_fn(g):
        pieces = []
        offset = 0
        for size in sizes:
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offset, offset + size)
            pieces.append(g[tuple(sl)])
            offset += size
        return tuple(pieces)

    return _make(out, tensors, grad_fn)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def grad_fn(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _make(out, tensors, grad_fn)


def _sum(a, axis=None, keepdims=False):
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def grad_fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis=axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), grad_fn)


def _mean(a, axis=None, keepdims=False):
    a = as_tensor(a)
    count = a.data.size if axis is None else a.shape[axis]
    return mul(_sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def exp(a):
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a):
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sigmoid(a):
    """Elementwise logistic function, overflow-safe on both tails."""
    a = as_tensor(a)
    t = np.exp(-np.abs(a.data))
    out = np.where(a.data >= 0, 1.0 / (1.0 + t), t / (1.0 + t))

    def grad_fn(g):
        return (g * out * (1.0 - out),)

    return _make(out, (a,), grad_fn)


def softmax(a, axis):
    """Softmax along `axis`, stabilized by max subtraction."""
    a = as_tensor(a)
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"softmax axis {axis} out of range for shape {a.shape}")
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=axis, keepdims=True)

    def grad_fn(g):
        inner = (g * out).sum(axis=axis, keepdims=True)
        return (out * (g - inner),)

    return _make(out, (a,), grad_fn)


def bce(target, prob):
    """Mean binary cross entropy; probabilities are clamped to [eps, 1-eps]."""
    target, prob = as_tensor(target), as_tensor(prob)
    if target.shape != prob.shape:
        raise DimensionError(f"bce needs equal shapes, got {target.shape} and {prob.shape}")
    p = np.clip(prob.data, _BCE_EPS, 1.0 - _BCE_EPS)
    t = target.data
    n = p.size
    out = np.asarray(np.mean(-(t * np.log(p) + (1.0 - t) * np.log1p(-p))))

    def grad_fn(g):
        inside = (prob.data > _BCE_EPS) & (prob.data < 1.0 - _BCE_EPS)
        dprob = np.where(inside, (p - t) / (p * (1.0 - p)), 0.0) * (g / n)
        dtarget = (np.log1p(-p) - np.log(p)) * (g / n)
        return dtarget, dprob

    return _make(out, (target, prob), grad_fn)


def attention(query, kv, wq, wk, wv):
    """Single-head scaled dot-product attention with learned projections.

    Self-attention when `query` and `kv` are the same token set, cross
    attention otherwise. No output projection or feed-forward stage.
    """
    query, kv = as_tensor(query), as_tensor(kv)
    wq, wk, wv = as_tensor(wq), as_tensor(wk), as_tensor(wv)
    if query.ndim != 2 or kv.ndim != 2 or query.shape[1] != kv.shape[1]:
        raise DimensionError(
            f"attention needs token sets with one embedding width, got {query.shape} and {kv.shape}"
        )
    if wq.shape[0] != query.shape[1]:
        raise DimensionError(f"projection {wq.shape} does not accept tokens of width {query.shape[1]}")
    q = matmul(query, wq)
    k = matmul(kv, wk)
    v = matmul(kv, wv)
    scores = mul(matmul(q, transpose(k)), 1.0 / math.sqrt(wk.shape[1]))
    return matmul(softmax(scores, axis=1), v)
