"""Reverse-mode automatic differentiation on numpy arrays.

A Tensor records the ops that produced it; calling backward() on a scalar
loss walks the tape in reverse topological order. Ops only compute and
accumulate gradients for parents with requires_grad set, so frozen
parameters receive no gradient entry at all.
"""

from __future__ import annotations

import numpy as np

from ..errors import UsageError
from . import kernels

# Test hook: when set to a dict, every gradient accumulation into a leaf
# tensor increments the count under the leaf's name (or id). Used to audit
# per-parameter backward visits.
visit_counter = None


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "name", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, name=None):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}{flag})"

    def item(self):
        return float(self.data)

    def backward(self):
        backward(self)

    def __add__(self, other):
        return add(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(value):
    if isinstance(value, Tensor):
        return value
    return Tensor(np.asarray(value))


def detach(t):
    """Same values, cut off from the tape."""
    return Tensor(t.data if isinstance(t, Tensor) else np.asarray(t))


def _accumulate(t, g):
    if t.requires_grad:
        if visit_counter is not None and not t._parents:
            key = t.name if t.name is not None else id(t)
            visit_counter[key] = visit_counter.get(key, 0) + 1
        if t.grad is None:
            t.grad = np.array(g, copy=True)
        else:
            t.grad += g


def _make(data, parents, backward_fn):
    out = Tensor(data)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def backward(root):
    """Backpropagate from a scalar tensor through its recorded tape."""
    if not root._parents:
        raise UsageError("backward() requires a recorded computation")
    if root.data.size != 1:
        raise UsageError("backward() root must be a scalar loss")
    topo = []
    seen = set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if parent.requires_grad and id(parent) not in seen:
                stack.append((parent, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data + b.data

    def back(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))

    return _make(out_data, (a, b), back)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data * b.data

    def back(g):
        if a.requires_grad:
            _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        if b.requires_grad:
            _accumulate(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out_data, (a, b), back)


def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out_data = a.data @ b.data

    def back(g):
        if a.requires_grad:
            _accumulate(a, g @ b.data.T)
        if b.requires_grad:
            _accumulate(b, a.data.T @ g)

    return _make(out_data, (a, b), back)


def relu(x):
    x = as_tensor(x)
    out_data = kernels.relu(x.data)

    def back(g):
        _accumulate(x, g * (x.data > 0))

    return _make(out_data, (x,), back)


def exp(x):
    x = as_tensor(x)
    out_data = np.exp(x.data)

    def back(g):
        _accumulate(x, g * out_data)

    return _make(out_data, (x,), back)


def logsumexp(x):
    """Row-wise logsumexp over the last axis, keepdims."""
    x = as_tensor(x)
    out_data = kernels.logsumexp(x.data)

    def back(g):
        _accumulate(x, g * np.exp(x.data - out_data))

    return _make(out_data, (x,), back)


def tsum(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out_data = x.data.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        _accumulate(x, np.broadcast_to(g, x.data.shape))

    return _make(out_data, (x,), back)


def mean_all(x):
    x = as_tensor(x)
    return mul(tsum(x), 1.0 / x.data.size)


def reshape(x, shape):
    x = as_tensor(x)
    out_data = x.data.reshape(shape)

    def back(g):
        _accumulate(x, g.reshape(x.data.shape))

    return _make(out_data, (x,), back)


def take_rows(x, labels):
    """Pick x[i, labels[i]] for every row i."""
    x = as_tensor(x)
    idx = np.arange(x.data.shape[0])
    out_data = x.data[idx, labels]

    def back(g):
        gx = np.zeros_like(x.data)
        gx[idx, labels] = g
        _accumulate(x, gx)

    return _make(out_data, (x,), back)


def dense(x, w, b):
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    out_data = kernels.dense(x.data, w.data, b.data)

    def back(g):
        if x.requires_grad:
            _accumulate(x, g @ w.data.T)
        if w.requires_grad:
            _accumulate(w, x.data.T @ g)
        if b.requires_grad:
            _accumulate(b, g.sum(axis=0))

    return _make(out_data, (x, w, b), back)


def conv2d(x, w, b, stride=1, padding=1):
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    need = any(t.requires_grad for t in (x, w, b))
    out_data, cols = kernels.conv2d(x.data, w.data, b.data, stride, padding, need_cols=need)
    cout = w.data.shape[0]

    def back(g):
        g2 = g.transpose(1, 0, 2, 3).reshape(cout, -1)
        if w.requires_grad:
            _accumulate(w, (g2 @ cols.T).reshape(w.data.shape))
        if b.requires_grad:
            _accumulate(b, g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            _accumulate(x, kernels.conv2d_input_grad(g, w.data, x.data.shape, stride, padding))

    return _make(out_data, (x, w, b), back)


def groupnorm(x, gain, bias, groups, eps=1e-5):
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    out_data, (xhat, inv_std) = kernels.groupnorm(x.data, gain.data, bias.data, groups, eps)
    c = x.data.shape[1]
    reduce_axes = (0,) + tuple(range(2, x.data.ndim))

    def back(g):
        if gain.requires_grad:
            _accumulate(gain, (g * xhat).sum(axis=reduce_axes))
        if bias.requires_grad:
            _accumulate(bias, g.sum(axis=reduce_axes))
        if x.requires_grad:
            _accumulate(x, kernels.groupnorm_input_grad(g, gain.data, xhat, inv_std, groups))

    return _make(out_data, (x, gain, bias), back)


def avg_pool(x, kh, kw):
    x = as_tensor(x)
    out_data = kernels.avg_pool(x.data, kh, kw)

    def back(g):
        _accumulate(x, kernels.avg_pool_input_grad(g, x.data.shape, kh, kw))

    return _make(out_data, (x,), back)


def flatten(x):
    x = as_tensor(x)
    return reshape(x, (x.data.shape[0], -1))


def adapt(x, target):
    x = as_tensor(x)
    out_data = kernels.adapt(x.data, target)

    def back(g):
        _accumulate(x, kernels.adapt_input_grad(g, x.data.shape))

    return _make(out_data, (x,), back)
