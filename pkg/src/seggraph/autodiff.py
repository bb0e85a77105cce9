"""Minimal reverse-mode differentiation over dense numpy tensors.

A forward pass builds a tape of ``Tensor`` nodes; ``backward()`` on a scalar
walks the tape in reverse topological order and accumulates exact analytic
gradients into ``grad`` buffers.  Only the primitives the segment-graph model
needs are provided, plus grouped/segmented reductions, Adam, cross-entropy,
and a central-difference gradient checker.

Training runs in float32; the checker runs the same graph in float64.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyGroupError, MetricUndefinedError, NonFiniteGradientError, ShapeMismatchError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None):
        self.data = np.asarray(data)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = _parents
        self._backward = _backward

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def _accumulate(self, g):
        if self.grad is None:
            self.grad = np.array(g, dtype=self.data.dtype)
        else:
            self.grad += g

    def zero_grad(self):
        self.grad = None

    def backward(self):
        if self.data.size != 1:
            raise ShapeMismatchError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                topo.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p.requires_grad and id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.data))
        for node in reversed(topo):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return add(self, mul(_as_tensor(other, self), -1.0))

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


def tensor(data, requires_grad=False, dtype=None) -> Tensor:
    arr = np.asarray(data, dtype=dtype)
    return Tensor(arr, requires_grad=requires_grad)


def _as_tensor(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and g.shape[axis] != 1:
            g = g.sum(axis=axis, keepdims=True)
    return g.reshape(shape)


def _node(data, parents, backward) -> Tensor:
    req = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=req, _parents=tuple(p for p in parents if p.requires_grad), _backward=backward if req else None)


def add(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeMismatchError(f"add: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _node(data, (a, b), backward)


def mul(a: Tensor, b) -> Tensor:
    b = _as_tensor(b, a)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeMismatchError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")

    def backward(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _node(data, (a, b), backward)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a._accumulate(g @ b.data.T)
        if b.requires_grad:
            b._accumulate(a.data.T @ g)

    return _node(data, (a, b), backward)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        for t, piece in zip(tensors, np.split(g, splits, axis=axis)):
            if t.requires_grad:
                t._accumulate(piece)

    return _node(data, tuple(tensors), backward)


def reshape(a: Tensor, shape) -> Tensor:
    data = a.data.reshape(shape)

    def backward(g):
        a._accumulate(g.reshape(a.shape))

    return _node(data, (a,), backward)


def gather_rows(a: Tensor, idx: np.ndarray) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    data = a.data[idx]

    def backward(g):
        a._accumulate(_segment_sum(g, idx, len(a.data)))

    return _node(data, (a,), backward)


def _segment_sum(values: np.ndarray, groups: np.ndarray, num_groups: int) -> np.ndarray:
    """Deterministic per-group sum along axis 0."""
    if values.ndim == 1:
        return np.bincount(groups, weights=values, minlength=num_groups).astype(values.dtype)
    flat = values.reshape(len(values), -1)
    cols = flat.shape[1]
    idx = (groups[:, None] * cols + np.arange(cols)[None, :]).ravel()
    out = np.bincount(idx, weights=flat.ravel(), minlength=num_groups * cols)
    return out.reshape((num_groups,) + values.shape[1:]).astype(values.dtype)


def scatter_add_rows(a: Tensor, idx: np.ndarray, num_rows: int) -> Tensor:
    idx = np.asarray(idx, dtype=np.int64)
    if len(idx) != len(a.data):
        raise ShapeMismatchError(f"scatter_add: {len(idx)} indices for {len(a.data)} rows")
    data = _segment_sum(a.data, idx, num_rows)

    def backward(g):
        a._accumulate(g[idx])

    return _node(data, (a,), backward)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, 0)

    def backward(g):
        a._accumulate(g * mask)

    return _node(data, (a,), backward)


def leaky_relu(a: Tensor, slope: float = 0.2) -> Tensor:
    mask = a.data > 0
    data = np.where(mask, a.data, slope * a.data)

    def backward(g):
        a._accumulate(g * np.where(mask, 1.0, slope).astype(a.dtype))

    return _node(data, (a,), backward)


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def backward(g):
        a._accumulate(g * (1.0 - data * data))

    return _node(data, (a,), backward)


def sum_(a: Tensor, axis=None) -> Tensor:
    data = a.data.sum(axis=axis)

    def backward(g):
        if axis is None:
            a._accumulate(np.broadcast_to(g, a.shape).astype(a.dtype))
        else:
            a._accumulate(np.broadcast_to(np.expand_dims(g, axis), a.shape).astype(a.dtype))

    return _node(data, (a,), backward)


def mean_(a: Tensor) -> Tensor:
    return mul(sum_(a), 1.0 / a.data.size)


def grouped_softmax(values: Tensor, groups: np.ndarray, num_groups: int) -> Tensor:
    """Exp-normalize within each group (axis 0), with max subtraction.

    Group ids must be dense in [0, num_groups); empty groups simply produce
    no outputs.  Trailing axes are softmaxed independently per group.
    """
    groups = np.asarray(groups, dtype=np.int64)
    if len(groups) != len(values.data):
        raise ShapeMismatchError(f"grouped_softmax: {len(groups)} group ids for {len(values.data)} rows")
    shape = (num_groups,) + values.data.shape[1:]
    gmax = np.full(shape, -np.inf, dtype=values.dtype)
    np.maximum.at(gmax, groups, values.data)
    e = np.exp(values.data - gmax[groups])
    gsum = _segment_sum(e, groups, num_groups)
    data = e / gsum[groups]

    def backward(g):
        dot = _segment_sum(g * data, groups, num_groups)
        values._accumulate(data * (g - dot[groups]))

    return _node(data, (values,), backward)


def segmented_maxpool(features: Tensor, groups: np.ndarray, num_groups: int) -> Tensor:
    """Per-group, per-channel max; gradient routes to the lowest-index argmax."""
    groups = np.asarray(groups, dtype=np.int64)
    x = features.data
    if x.ndim != 2:
        raise ShapeMismatchError(f"segmented_maxpool expects (P, C), got {x.shape}")
    counts = np.bincount(groups, minlength=num_groups)
    if np.any(counts == 0):
        empty = int(np.flatnonzero(counts == 0)[0])
        raise EmptyGroupError(f"segmented_maxpool: group {empty} has no members")
    order = np.argsort(groups, kind="stable")
    starts = np.zeros(num_groups + 1, dtype=np.int64)
    np.cumsum(counts, out=starts[1:])
    route = np.empty((num_groups, x.shape[1]), dtype=np.int64)
    for gidx in range(num_groups):
        block = order[starts[gidx] : starts[gidx + 1]]
        route[gidx] = block[np.argmax(x[block], axis=0)]
    cols = np.arange(x.shape[1])
    data = x[route, cols]

    def backward(g):
        buf = np.zeros_like(x)
        np.add.at(buf, (route, cols), g)
        features._accumulate(buf)

    return _node(data, (features,), backward)


def cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = -1) -> Tensor:
    """Mean negative log-likelihood over rows whose label is not ignored."""
    labels = np.asarray(labels, dtype=np.int64)
    x = logits.data
    if x.ndim != 2 or len(labels) != len(x):
        raise ShapeMismatchError(f"cross_entropy: logits {x.shape} vs labels {labels.shape}")
    valid = labels != ignore_index
    count = int(valid.sum())
    if count == 0:
        raise MetricUndefinedError("cross_entropy: every label is ignored")
    shifted = x - x.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1))
    picked = shifted[np.arange(len(x)), np.clip(labels, 0, x.shape[1] - 1)]
    losses = np.where(valid, lse - picked, 0.0)
    data = np.asarray(losses.sum() / count, dtype=x.dtype)

    def backward(g):
        soft = np.exp(shifted)
        soft /= soft.sum(axis=1, keepdims=True)
        rows = np.flatnonzero(valid)
        grad = np.zeros_like(x)
        grad[rows] = soft[rows]
        grad[rows, labels[rows]] -= 1.0
        logits._accumulate(grad * (float(g) / count))

    return _node(data, (logits,), backward)


class ParamStore:
    """Named trainable tensors with deterministic iteration order."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, name: str, array: np.ndarray) -> Tensor:
        if name in self._params:
            raise ShapeMismatchError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(array), requires_grad=True)
        self._params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def zero_grad(self):
        for t in self._params.values():
            t.zero_grad()

    def num_parameters(self) -> int:
        return sum(t.data.size for t in self._params.values())

    def astype(self, dtype) -> "ParamStore":
        out = ParamStore()
        for name, t in self._params.items():
            out.add(name, t.data.astype(dtype))
        return out

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name, t in self._params.items():
            if name not in arrays:
                raise ShapeMismatchError(f"missing parameter {name!r} in checkpoint")
            if arrays[name].shape != t.data.shape:
                raise ShapeMismatchError(f"parameter {name!r}: shape {arrays[name].shape} != {t.data.shape}")
            t.data = arrays[name].astype(t.data.dtype)


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ParamStore, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        state = cls(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, t in params.items():
            state.m[name] = np.zeros_like(t.data)
            state.v[name] = np.zeros_like(t.data)
        return state


def adam_step(params: ParamStore, state: AdamState) -> None:
    """One Adam update with bias correction; zeroes gradients afterwards."""
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.step
    bc2 = 1.0 - b2**state.step
    for name, t in params.items():
        g = t.grad if t.grad is not None else np.zeros_like(t.data)
        if not np.all(np.isfinite(g)):
            raise NonFiniteGradientError(f"non-finite gradient for parameter {name!r} at step {state.step}")
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        t.data = t.data - (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(t.data.dtype)
        t.grad = None


def gradcheck(fn, tensors: list[Tensor], h: float = 1e-5, atol: float = 1e-9) -> float:
    """Max relative error between analytic and central-difference gradients.

    ``fn`` must rebuild the graph and return a scalar Tensor on every call;
    ``tensors`` are the leaves to perturb (float64 strongly recommended).
    Relative error uses denominator max(|analytic|, |numeric|, 1e-8).

    Central differences carry irreducible round-off of about ulp(f)/(2h), so
    coordinates where both gradients fall below ``atol`` sit beneath the
    method's resolution and are reported as matching.
    """
    for t in tensors:
        t.zero_grad()
    out = fn()
    out.backward()
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    worst = 0.0
    for t, ana in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(fn().data)
            flat[i] = orig - h
            f_minus = float(fn().data)
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(ana.reshape(-1)[i])
            if max(abs(a), abs(numeric)) < atol:
                continue
            err = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, err)
    return worst
