"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every operation returns a new :class:`Tensor`.  When any operand requires a
gradient, the result records its parents and a closure mapping the upstream
gradient to one gradient per parent.  Node ids are drawn from a global
monotone counter, so sorting reachable nodes by id gives a valid
topological order for the backward sweep.

Broadcasting is deliberately narrow: equal shapes, a size-1 operand against
anything, or an operand whose shape (leading 1s stripped) is a trailing
suffix of the other's.  ``(H,)`` against ``(B, L, H)`` is fine; ``(B, 1, H)``
against ``(B, L, H)`` is not.
"""
from __future__ import annotations

import itertools
import math
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import ContractError, DimensionError, NumericError, ParameterError

_node_ids = itertools.count()


def _check_finite(arr: np.ndarray, what: str) -> None:
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} produced non-finite values")


class Tensor:
    """A value array plus the bookkeeping reverse-mode differentiation needs."""

    __slots__ = ("data", "requires_grad", "grad", "node_id", "op", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        _check_finite(arr, "tensor construction")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.node_id = next(_node_ids)
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None

    @classmethod
    def _result(cls, arr: np.ndarray, parents: tuple["Tensor", ...], backward: Callable, op: str) -> "Tensor":
        _check_finite(arr, op)
        out = cls.__new__(cls)
        out.data = arr
        out.grad = None
        out.node_id = next(_node_ids)
        out.op = op
        out.requires_grad = any(p.requires_grad for p in parents)
        if out.requires_grad:
            out._parents = parents
            out._backward = backward
        else:
            out._parents = ()
            out._backward = None
        return out

    # -- introspection -------------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def is_leaf(self) -> bool:
        return self._backward is None

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single element, got shape {self.shape}")
        return float(self.data.reshape(()))

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    # -- operator sugar ------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, float(other))
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return tsum(self, axis, keepdims)

    def mean(self, axis: int | None = None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis, keepdims)

    def transpose_last_two(self) -> "Tensor":
        return transpose_last_two(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


# ---------------------------------------------------------------------------
# broadcasting helpers


def _strip_leading_ones(shape: tuple[int, ...]) -> tuple[int, ...]:
    i = 0
    while i < len(shape) and shape[i] == 1:
        i += 1
    return shape[i:]


def _broadcast_shape(sa: tuple[int, ...], sb: tuple[int, ...], op: str) -> tuple[int, ...]:
    if sa == sb:
        return sa
    if math.prod(sa) == 1 and len(sa) <= len(sb):
        return sb
    if math.prod(sb) == 1 and len(sb) <= len(sa):
        return sa
    ta, tb = _strip_leading_ones(sa), _strip_leading_ones(sb)
    if len(sa) <= len(sb) and sb[len(sb) - len(ta):] == ta:
        return sb
    if len(sb) <= len(sa) and sa[len(sa) - len(tb):] == tb:
        return sa
    raise DimensionError(f"{op}: incompatible shapes {sa} and {sb}")


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy-style broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, d in enumerate(shape) if d == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _norm_axis(axis: int, ndim: int, op: str) -> int:
    if not -ndim <= axis < ndim:
        raise DimensionError(f"{op}: axis {axis} out of range for {ndim}-d tensor")
    return axis % ndim


# ---------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "add")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(g, sb)

    return Tensor._result(a.data + b.data, (a, b), bw, "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "sub")
    sa, sb = a.shape, b.shape

    def bw(g):
        return _unbroadcast(g, sa), _unbroadcast(-g, sb)

    return Tensor._result(a.data - b.data, (a, b), bw, "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape, "mul")
    ad, bd = a.data, b.data

    def bw(g):
        return _unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)

    return Tensor._result(ad * bd, (a, b), bw, "mul")


def scale(a, c: float) -> Tensor:
    """Multiply by a fixed Python scalar (not a graph node)."""
    a = as_tensor(a)
    c = float(c)

    def bw(g):
        return (g * c,)

    return Tensor._result(a.data * c, (a,), bw, "scale")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0

    def bw(g):
        return (g * mask,)

    return Tensor._result(np.where(mask, a.data, 0.0), (a,), bw, "relu")


def _sigmoid_array(x: np.ndarray) -> np.ndarray:
    return np.exp(-np.logaddexp(0.0, -x))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    s = _sigmoid_array(a.data)

    def bw(g):
        return (g * s * (1.0 - s),)

    return Tensor._result(s, (a,), bw, "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    t = np.tanh(a.data)

    def bw(g):
        return (g * (1.0 - t * t),)

    return Tensor._result(t, (a,), bw, "tanh")


# ---------------------------------------------------------------------------
# linear algebra and shape manipulation


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError(f"matmul needs at least 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul: inner dimensions differ for {a.shape} and {b.shape}")
    la, lb = a.shape[:-2], b.shape[:-2]
    for x, y in zip(reversed(la), reversed(lb)):
        if x != y and x != 1 and y != 1:
            raise DimensionError(f"matmul: batch dimensions differ for {a.shape} and {b.shape}")
    ad, bd = a.data, b.data

    def bw(g):
        ga = np.matmul(g, np.swapaxes(bd, -1, -2))
        gb = np.matmul(np.swapaxes(ad, -1, -2), g)
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)

    return Tensor._result(np.matmul(ad, bd), (a, b), bw, "matmul")


def transpose_last_two(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise DimensionError(f"transpose_last_two needs a 2-d or higher tensor, got {a.shape}")

    def bw(g):
        return (np.swapaxes(g, -1, -2),)

    return Tensor._result(np.swapaxes(a.data, -1, -2), (a,), bw, "transpose")


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(tuple(shape))
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {old} as {tuple(shape)}") from exc

    def bw(g):
        return (g.reshape(old),)

    return Tensor._result(out, (a,), bw, "reshape")


def concat(tensors: Iterable, axis: int = -1) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ContractError("concat of an empty sequence")
    ax = _norm_axis(axis, ts[0].ndim, "concat")
    try:
        out = np.concatenate([t.data for t in ts], axis=ax)
    except ValueError as exc:
        raise DimensionError(f"concat: incompatible shapes {[t.shape for t in ts]}") from exc
    splits = np.cumsum([t.shape[ax] for t in ts])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=ax))

    return Tensor._result(out, ts, bw, "concat")


def stack(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = tuple(as_tensor(t) for t in tensors)
    if not ts:
        raise ContractError("stack of an empty sequence")
    ax = _norm_axis(axis, ts[0].ndim + 1, "stack")
    if any(t.shape != ts[0].shape for t in ts):
        raise DimensionError(f"stack: shapes differ {[t.shape for t in ts]}")
    out = np.stack([t.data for t in ts], axis=ax)

    def bw(g):
        return tuple(np.take(g, i, axis=ax) for i in range(len(ts)))

    return Tensor._result(out, ts, bw, "stack")


def select(a, index: int, axis: int) -> Tensor:
    """Pick one position along ``axis``; the axis is dropped."""
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim, "select")
    n = a.shape[ax]
    if not -n <= index < n:
        raise DimensionError(f"select: index {index} out of range for axis of size {n}")
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        idx = [slice(None)] * len(shape)
        idx[ax] = index
        full[tuple(idx)] = g
        return (full,)

    return Tensor._result(np.take(a.data, index, axis=ax), (a,), bw, "select")


def slice_axis(a, start: int, stop: int, axis: int = 0) -> Tensor:
    """Half-open range ``[start, stop)`` along ``axis``; the axis is kept."""
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim, "slice")
    n = a.shape[ax]
    if not 0 <= start < stop <= n:
        raise DimensionError(f"slice: range [{start}, {stop}) invalid for axis of size {n}")
    idx = [slice(None)] * a.ndim
    idx[ax] = slice(start, stop)
    idx = tuple(idx)
    shape = a.shape

    def bw(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return Tensor._result(a.data[idx].copy(), (a,), bw, "slice")


# ---------------------------------------------------------------------------
# reductions


def tsum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shape = a.shape
    ax = None if axis is None else _norm_axis(axis, a.ndim, "sum")

    def bw(g):
        if ax is not None and not keepdims:
            g = np.expand_dims(g, ax)
        return (np.broadcast_to(g, shape).copy(),)

    return Tensor._result(np.asarray(a.data.sum(axis=ax, keepdims=keepdims)), (a,), bw, "sum")


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = a.size if axis is None else a.shape[_norm_axis(axis, a.ndim, "mean")]
    return scale(tsum(a, axis, keepdims), 1.0 / count)


# ---------------------------------------------------------------------------
# softmax family


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim, "softmax")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    e = np.exp(shifted)
    s = e / e.sum(axis=ax, keepdims=True)

    def bw(g):
        return (s * (g - (g * s).sum(axis=ax, keepdims=True)),)

    return Tensor._result(s, (a,), bw, "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim, "log_softmax")
    shifted = a.data - a.data.max(axis=ax, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=ax, keepdims=True))
    out = shifted - lse

    def bw(g):
        return (g - np.exp(out) * g.sum(axis=ax, keepdims=True),)

    return Tensor._result(out, (a,), bw, "log_softmax")


# ---------------------------------------------------------------------------
# regularisation


def dropout(a, rate: float, training: bool, rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: survivors are scaled by ``1 / (1 - rate)`` at train time."""
    if not 0.0 <= rate < 1.0:
        raise ParameterError(f"dropout rate must lie in [0, 1), got {rate}")
    a = as_tensor(a)
    if not training or rate == 0.0:
        return a
    if rng is None:
        raise ContractError("dropout in training mode needs an explicit rng")
    keep = (rng.random(a.shape) >= rate) / (1.0 - rate)

    def bw(g):
        return (g * keep,)

    return Tensor._result(a.data * keep, (a,), bw, "dropout")


# ---------------------------------------------------------------------------
# reverse sweep


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into ``.grad`` of every reachable leaf.

    The graph behind ``loss`` is released afterwards; a second call on the
    same loss raises :class:`ContractError`.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("backward on a tensor that does not require grad")
    if loss.op != "leaf" and loss._backward is None:
        raise ContractError("graph behind this loss was already consumed")

    nodes: dict[int, Tensor] = {}
    stack_ = [loss]
    while stack_:
        t = stack_.pop()
        if t.node_id in nodes:
            continue
        nodes[t.node_id] = t
        stack_.extend(p for p in t._parents if p.requires_grad and p.node_id not in nodes)

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones(loss.shape)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if g is None:
            continue
        if t._backward is None:
            if t.op == "leaf":
                t.grad = g.copy() if t.grad is None else t.grad + g
            continue
        for p, pg in zip(t._parents, t._backward(g)):
            if not p.requires_grad or pg is None:
                continue
            if p.node_id in grads:
                grads[p.node_id] = grads[p.node_id] + pg
            else:
                grads[p.node_id] = pg
        t._parents = ()
        t._backward = None
