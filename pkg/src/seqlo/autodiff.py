"""Reverse-mode automatic differentiation over numpy arrays.

A Tensor wraps a float64 ndarray plus the closures needed to push a
cotangent back to its parents. Graphs are built eagerly by the ops below
and freed as soon as the caller drops the output; backward() walks the
graph once in reverse topological order.

Only the operations the odometry network needs are implemented. All of
them are deterministic: no threading, no unordered reductions, so a
repeated forward pass over identical inputs is bit-identical.
"""

from __future__ import annotations

import contextlib

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph construction inside the block (inference mode)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def grad_enabled() -> bool:
    return _GRAD_ENABLED


class Tensor:
    """Array node of the computation graph.

    `_backs` holds (parent, vjp) pairs; vjp maps the cotangent of this
    node to the cotangent contribution for that parent. Leaves created
    with requires_grad=True (parameters) have no parents but still
    receive a .grad during backward().
    """

    __slots__ = ("data", "grad", "requires_grad", "_backs")

    def __init__(self, data, requires_grad=False, backs=()):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad) or bool(backs)
        self._backs = tuple(backs)

    # -- introspection ------------------------------------------------

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, grad={'yes' if self.requires_grad else 'no'})"

    def detach(self) -> "Tensor":
        """Same values, cut off from the graph."""
        return Tensor(self.data)

    # -- operators ----------------------------------------------------

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

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) != 1 else shape[0])

    # -- backward -----------------------------------------------------

    def backward(self, seed=None):
        """Accumulate gradients of this node into every reachable leaf.

        seed defaults to ones (the node is normally a scalar loss).
        Parent gradients add up, so zero leaf .grad between steps.
        """
        if seed is None:
            seed = np.ones_like(self.data)
        else:
            seed = np.asarray(seed, dtype=np.float64)
            if seed.shape != self.data.shape:
                raise ValueError(f"seed shape {seed.shape} != value shape {self.data.shape}")

        topo = _toposort(self)
        self.grad = seed if self.grad is None else self.grad + seed
        for node in topo:
            g = node.grad
            if g is None:
                continue
            for parent, vjp in node._backs:
                contrib = vjp(g)
                parent.grad = contrib if parent.grad is None else parent.grad + contrib
            if node._backs:
                node.grad = None  # free intermediates; leaves keep theirs


def _toposort(root: Tensor):
    """Iterative post-order DFS; returns nodes in reverse topological order."""
    order = []
    visited = set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent, _ in node._backs:
            if id(parent) not in visited:
                stack.append((parent, False))
    order.reverse()
    return order


# -- construction helpers ---------------------------------------------


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def constant(x) -> Tensor:
    return Tensor(x)


def parameter(x) -> Tensor:
    return Tensor(x, requires_grad=True)


def _make(data, backs):
    """Build an op output; drops the tape when grads are off or unused."""
    if not _GRAD_ENABLED:
        return Tensor(data)
    backs = [(p, fn) for p, fn in backs if p.requires_grad]
    return Tensor(data, backs=backs)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


# -- arithmetic -------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data + b.data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(g, b.data.shape)),
    ])


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data - b.data, [
        (a, lambda g: _unbroadcast(g, a.data.shape)),
        (b, lambda g: _unbroadcast(-g, b.data.shape)),
    ])


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data * b.data, [
        (a, lambda g: _unbroadcast(g * b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(g * a.data, b.data.shape)),
    ])


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(a.data / b.data, [
        (a, lambda g: _unbroadcast(g / b.data, a.data.shape)),
        (b, lambda g: _unbroadcast(-g * a.data / (b.data * b.data), b.data.shape)),
    ])


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, [(a, lambda g: -g)])


def matmul(a, b) -> Tensor:
    """a @ b with b restricted to a 2-d weight matrix; a may be batched."""
    a, b = as_tensor(a), as_tensor(b)
    if b.data.ndim != 2:
        raise ValueError("matmul: right operand must be 2-d")
    out = a.data @ b.data

    def grad_a(g):
        return g @ b.data.T

    def grad_b(g):
        m, k = b.data.shape
        return a.data.reshape(-1, m).T @ g.reshape(-1, k)

    return _make(out, [(a, grad_a), (b, grad_b)])


# -- elementwise nonlinear --------------------------------------------


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, [(a, lambda g: g * out)])


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), [(a, lambda g: g / a.data)])


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return _make(out, [(a, lambda g: g * (1.0 - out * out))])


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    x = a.data
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return _make(out, [(a, lambda g: g * out * (1.0 - out))])


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), [(a, lambda g: g * mask)])


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, [(a, lambda g: g * 0.5 / out)])


def absval(a) -> Tensor:
    a = as_tensor(a)
    sign = np.sign(a.data)
    return _make(np.abs(a.data), [(a, lambda g: g * sign)])


# -- reductions -------------------------------------------------------


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def vjp(g):
        if axis is None:
            return np.broadcast_to(g, a.data.shape).copy() if np.ndim(g) == 0 else np.full(a.data.shape, g)
        gg = g if keepdims else np.expand_dims(g, axis)
        return np.broadcast_to(gg, a.data.shape).copy()

    return _make(out, [(a, vjp)])


def tmax(a, axis, keepdims=False) -> Tensor:
    """Max along one axis; gradient routes to the first maximum per slice."""
    a = as_tensor(a)
    arg = a.data.argmax(axis=axis)
    out = np.take_along_axis(a.data, np.expand_dims(arg, axis), axis=axis)
    if not keepdims:
        out = np.squeeze(out, axis=axis)

    def vjp(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        full = np.zeros_like(a.data)
        np.put_along_axis(full, np.expand_dims(arg, axis), gg, axis=axis)
        return full

    return _make(out, [(a, vjp)])


def softmax(a, axis) -> Tensor:
    """Stable softmax; the shift by a detached max has exact gradient
    because the softmax Jacobian annihilates constant offsets."""
    a = as_tensor(a)
    shift = constant(a.data.max(axis=axis, keepdims=True))
    e = exp(sub(a, shift))
    return div(e, tsum(e, axis=axis, keepdims=True))


def l2norm(a) -> Tensor:
    """Euclidean norm of the whole array, safe at zero (subgradient 0)."""
    a = as_tensor(a)
    out = np.sqrt(np.sum(a.data * a.data))

    def vjp(g):
        return g * a.data / max(out, np.finfo(np.float64).tiny)

    return _make(out, [(a, vjp)])


# -- shape & indexing -------------------------------------------------


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), [(a, lambda g: g.reshape(a.data.shape))])


def broadcast_to(a, shape) -> Tensor:
    a = as_tensor(a)
    shape = tuple(shape)
    return _make(np.broadcast_to(a.data, shape).copy(),
                 [(a, lambda g: _unbroadcast(g, a.data.shape))])


def concat(parts, axis=-1) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    out = np.concatenate([p.data for p in parts], axis=axis)
    backs = []
    offset = 0
    ax = axis if axis >= 0 else out.ndim + axis
    for p in parts:
        width = p.data.shape[ax]
        sl = (slice(None),) * ax + (slice(offset, offset + width),)
        backs.append((p, lambda g, sl=sl: g[sl]))
        offset += width
    return _make(out, backs)


def getitem(a, key) -> Tensor:
    """Basic indexing (ints/slices); each input element used at most once."""
    a = as_tensor(a)

    def vjp(g):
        full = np.zeros_like(a.data)
        full[key] = g
        return full

    return _make(a.data[key], [(a, vjp)])


def gather_rows(a, idx) -> Tensor:
    """out[...] = a[idx[...]] along axis 0; scatter-add transpose.

    a: (N, D) or (N,), idx: integer array of any shape.
    """
    a = as_tensor(a)
    idx = np.asarray(idx)
    out = a.data[idx]

    def vjp(g):
        full = np.zeros_like(a.data)
        flat_idx = idx.reshape(-1)
        flat_g = g.reshape(flat_idx.shape[0], -1)
        if flat_idx.size == 0:
            return full
        order = np.argsort(flat_idx, kind="stable")
        sidx = flat_idx[order]
        sg = flat_g[order]
        bounds = np.flatnonzero(np.r_[True, sidx[1:] != sidx[:-1]])
        sums = np.add.reduceat(sg, bounds, axis=0)
        full.reshape(a.data.shape[0], -1)[sidx[bounds]] += sums
        return full

    return _make(out, [(a, vjp)])


def dropout(a, rate: float, rng: np.random.Generator) -> Tensor:
    """Inverted dropout; call only in training mode."""
    if rate <= 0.0:
        return as_tensor(a)
    if rate >= 1.0:
        raise ValueError("dropout rate must be < 1")
    a = as_tensor(a)
    mask = (rng.random(a.data.shape) >= rate) / (1.0 - rate)
    return mul(a, constant(mask))
