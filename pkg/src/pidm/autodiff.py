"""Reverse-mode automatic differentiation over float64 numpy buffers.

A Tape records differentiable ops in execution order while it is the
active context; Tape.backward walks the records in reverse and
accumulates gradients, so execution order doubles as the topological
order.  Ops only record when a tape is active and at least one input is
tracked, which lets frozen-weight forward passes run tape-free at zero
bookkeeping cost.

Broadcasting is deliberately narrow: operands must have equal shapes,
or one must be a single element, or one shape must be a trailing suffix
of the other (leading-axis broadcast).  Anything else raises ShapeError.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from .backend import conv1d_forward, conv1d_grad_input, conv1d_grad_weight
from .errors import NonFiniteGradientError, ShapeError

_TLS = threading.local()


def _tape_stack() -> list:
    stack = getattr(_TLS, "stack", None)
    if stack is None:
        stack = []
        _TLS.stack = stack
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A float64 array plus the bookkeeping needed for reverse mode.

    requires_grad marks leaves the caller wants gradients for; outputs of
    recorded ops inherit the flag so the tape can chase them back.
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False) -> None:
        arr = np.asarray(data, dtype=np.float64)
        if not arr.flags["C_CONTIGUOUS"]:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # arithmetic sugar; all routes through the module-level ops
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
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class Tape:
    """Ordered op records for one differentiation pass.

    Single-threaded by design; independent tapes on separate threads are
    fine because the active-tape stack is thread-local.
    """

    def __init__(self) -> None:
        # each record: (op_name, input tensors, output tensor, backward fn)
        self._records: list[tuple[str, tuple, Tensor, Callable]] = []
        self._tensors: dict[int, Tensor] = {}

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        if not stack or stack[-1] is not self:
            raise RuntimeError("tape context exited out of order")
        stack.pop()

    def __len__(self) -> int:
        return len(self._records)

    def _append(self, op: str, inputs: tuple, out: Tensor, bwd: Callable) -> None:
        self._records.append((op, inputs, out, bwd))
        for t in inputs:
            self._tensors.setdefault(id(t), t)
        self._tensors.setdefault(id(out), out)

    def clear(self) -> None:
        self._records.clear()
        self._tensors.clear()

    def backward(self, root: Tensor) -> dict[Tensor, np.ndarray]:
        """Accumulate d(root)/d(leaf) for every tracked leaf in this tape.

        root must be a single-element tensor.  Gradients are written to
        leaf.grad (overwriting any previous value) and returned as a map
        from leaf tensor to gradient array.  A NaN or Inf appearing in any
        produced gradient buffer aborts with the offending node id.
        """
        if not isinstance(root, Tensor):
            raise TypeError("backward root must be a Tensor")
        if root.data.size != 1:
            raise ValueError(f"backward root must be scalar, got shape {root.shape}")
        buffers: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
        for node_id in range(len(self._records) - 1, -1, -1):
            op, inputs, out, bwd = self._records[node_id]
            gout = buffers.pop(id(out), None)
            if gout is None:
                continue
            grads = bwd(gout)
            for t, g in zip(inputs, grads):
                if g is None or not t.requires_grad:
                    continue
                if not np.all(np.isfinite(g)):
                    raise NonFiniteGradientError(node_id, op)
                prev = buffers.get(id(t))
                buffers[id(t)] = g if prev is None else prev + g
        leaf_grads: dict[Tensor, np.ndarray] = {}
        for tid, g in buffers.items():
            t = self._tensors.get(tid)
            if t is not None and t.requires_grad:
                t.grad = g
                leaf_grads[t] = g
        return leaf_grads


def _record(op: str, inputs: tuple, out: Tensor, bwd: Callable) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape._append(op, inputs, out, bwd)
    return out


def _check_broadcast(op: str, sa: tuple, sb: tuple) -> None:
    if sa == sb:
        return
    if int(np.prod(sa)) == 1 or int(np.prod(sb)) == 1:
        return
    short, long = (sa, sb) if len(sa) < len(sb) else (sb, sa)
    if len(short) < len(long) and tuple(long[len(long) - len(short) :]) == tuple(short):
        return
    raise ShapeError(op, sa, sb)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if int(np.prod(shape)) == 1:
        return np.sum(g).reshape(shape)
    extra = g.ndim - len(shape)
    return g.sum(axis=tuple(range(extra)))


def _binary(op: str, a, b, fwd: Callable, bwd_pair: Callable) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)
    _check_broadcast(op, ta.data.shape, tb.data.shape)
    out = Tensor(fwd(ta.data, tb.data))

    def bwd(gout, ta=ta, tb=tb):
        ga, gb = bwd_pair(gout, ta.data, tb.data)
        ga = None if ga is None else _unbroadcast(ga, ta.data.shape)
        gb = None if gb is None else _unbroadcast(gb, tb.data.shape)
        return ga, gb

    return _record(op, (ta, tb), out, bwd)


def add(a, b) -> Tensor:
    return _binary("add", a, b, lambda x, y: x + y, lambda g, x, y: (g, g))


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, lambda x, y: x - y, lambda g, x, y: (g, -g))


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, lambda x, y: x * y, lambda g, x, y: (g * y, g * x))


def div(a, b) -> Tensor:
    return _binary("div", a, b, lambda x, y: x / y, lambda g, x, y: (g / y, -g * x / (y * y)))


def matmul(a, b) -> Tensor:
    ta, tb = as_tensor(a), as_tensor(b)
    if ta.data.ndim != 2 or tb.data.ndim != 2 or ta.data.shape[1] != tb.data.shape[0]:
        raise ShapeError("matmul", ta.data.shape, tb.data.shape)
    out = Tensor(ta.data @ tb.data)

    def bwd(g, ta=ta, tb=tb):
        return g @ tb.data.T, ta.data.T @ g

    return _record("matmul", (ta, tb), out, bwd)


def _unary(op: str, a, fwd: Callable, bwd_fn: Callable) -> Tensor:
    ta = as_tensor(a)
    out = Tensor(fwd(ta.data))

    def bwd(g, ta=ta, out=out):
        return (bwd_fn(g, ta.data, out.data),)

    return _record(op, (ta,), out, bwd)


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, y: g * y)


def log(a) -> Tensor:
    return _unary("log", a, np.log, lambda g, x, y: g / x)


def log1p(a) -> Tensor:
    return _unary("log1p", a, np.log1p, lambda g, x, y: g / (1.0 + x))


def sqrt(a) -> Tensor:
    return _unary("sqrt", a, np.sqrt, lambda g, x, y: g * 0.5 / y)


def sigmoid(a) -> Tensor:
    def fwd(x):
        out = np.empty_like(x)
        pos = x >= 0
        out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
        ex = np.exp(x[~pos])
        out[~pos] = ex / (1.0 + ex)
        return out

    return _unary("sigmoid", a, fwd, lambda g, x, y: g * y * (1.0 - y))


def silu(a) -> Tensor:
    ta = as_tensor(a)
    x = ta.data
    s = np.empty_like(x)
    pos = x >= 0
    s[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    s[~pos] = ex / (1.0 + ex)
    out = Tensor(x * s)

    def bwd(g, x=x, s=s):
        return (g * s * (1.0 + x * (1.0 - s)),)

    return _record("silu", (ta,), out, bwd)


def clamp(a, lo: float, hi: float) -> Tensor:
    if not lo < hi:
        raise ValueError(f"clamp requires lo < hi, got [{lo}, {hi}]")
    ta = as_tensor(a)
    out = Tensor(np.clip(ta.data, lo, hi))
    inside = (ta.data >= lo) & (ta.data <= hi)

    def bwd(g, inside=inside):
        return (g * inside,)

    return _record("clamp", (ta,), out, bwd)


def sum_(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ta = as_tensor(a)
    out = Tensor(np.sum(ta.data, axis=axis, keepdims=keepdims))

    def bwd(g, shape=ta.data.shape, axis=axis, keepdims=keepdims):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return _record("sum", (ta,), out, bwd)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    ta = as_tensor(a)
    out = Tensor(np.mean(ta.data, axis=axis, keepdims=keepdims))
    n = ta.data.size if axis is None else ta.data.shape[axis]

    def bwd(g, shape=ta.data.shape, axis=axis, keepdims=keepdims, n=n):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, shape).copy(),)

    return _record("mean", (ta,), out, bwd)


def mse(a, b) -> Tensor:
    """Mean over all elements of the squared difference."""
    ta, tb = as_tensor(a), as_tensor(b)
    if ta.data.shape != tb.data.shape:
        raise ShapeError("mse", ta.data.shape, tb.data.shape)
    diff = ta.data - tb.data
    out = Tensor(np.mean(diff * diff))

    def bwd(g, diff=diff):
        scale = 2.0 / diff.size
        gd = g * scale * diff
        return gd, -gd

    return _record("mse", (ta, tb), out, bwd)


def concat(tensors: Sequence, axis: int = -1) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    if not ts:
        raise ValueError("concat requires at least one tensor")
    out = Tensor(np.concatenate([t.data for t in ts], axis=axis))
    sizes = [t.data.shape[axis] for t in ts]

    def bwd(g, sizes=sizes, axis=axis):
        splits = np.cumsum(sizes[:-1])
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return _record("concat", tuple(ts), out, bwd)


def narrow(a, axis: int, start: int, length: int) -> Tensor:
    ta = as_tensor(a)
    dim = ta.data.shape[axis]
    if start < 0 or length < 0 or start + length > dim:
        raise ShapeError("narrow", ta.data.shape, (axis, start, length))
    idx = [slice(None)] * ta.data.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)
    out = Tensor(ta.data[idx].copy())

    def bwd(g, shape=ta.data.shape, idx=idx):
        full = np.zeros(shape, dtype=np.float64)
        full[idx] = g
        return (full,)

    return _record("narrow", (ta,), out, bwd)


def index_select_last(a, indices) -> Tensor:
    """Select columns along the final axis; duplicates accumulate in backward."""
    ta = as_tensor(a)
    idx = np.asarray(indices, dtype=np.intp)
    if idx.ndim != 1:
        raise ValueError("indices must be one-dimensional")
    if idx.size and (idx.min() < 0 or idx.max() >= ta.data.shape[-1]):
        raise IndexError(f"indices out of range for axis of size {ta.data.shape[-1]}")
    out = Tensor(np.ascontiguousarray(ta.data[..., idx]))

    def bwd(g, shape=ta.data.shape, idx=idx):
        full = np.zeros(shape, dtype=np.float64)
        np.add.at(full, (..., idx), g)
        return (full,)

    return _record("index_select_last", (ta,), out, bwd)


def transpose2d(a) -> Tensor:
    ta = as_tensor(a)
    if ta.data.ndim != 2:
        raise ShapeError("transpose2d", ta.data.shape)
    out = Tensor(np.ascontiguousarray(ta.data.T))

    def bwd(g):
        return (np.ascontiguousarray(g.T),)

    return _record("transpose2d", (ta,), out, bwd)


def broadcast_last(a, n: int) -> Tensor:
    """Append a trailing axis of size n by repetition; backward sums it out."""
    ta = as_tensor(a)
    out = Tensor(np.broadcast_to(ta.data[..., None], ta.data.shape + (n,)).copy())

    def bwd(g):
        return (g.sum(axis=-1),)

    return _record("broadcast_last", (ta,), out, bwd)


def avg_pool2(a) -> Tensor:
    """Halve the final axis by averaging adjacent pairs."""
    ta = as_tensor(a)
    length = ta.data.shape[-1]
    if length % 2 != 0:
        raise ShapeError("avg_pool2", ta.data.shape)
    out = Tensor((ta.data[..., ::2] + ta.data[..., 1::2]) * 0.5)

    def bwd(g):
        return (np.repeat(g * 0.5, 2, axis=-1),)

    return _record("avg_pool2", (ta,), out, bwd)


def upsample2(a) -> Tensor:
    """Double the final axis by nearest-neighbour repetition."""
    ta = as_tensor(a)
    out = Tensor(np.repeat(ta.data, 2, axis=-1))

    def bwd(g):
        return (g[..., ::2] + g[..., 1::2],)

    return _record("upsample2", (ta,), out, bwd)


def conv1d(x, w, bias=None) -> Tensor:
    """Same-padding correlation: x [B, Ci, L], w [Co, Ci, K] odd K, bias [Co]."""
    tx, tw = as_tensor(x), as_tensor(w)
    tb = None if bias is None else as_tensor(bias)
    if tx.data.ndim != 3 or tw.data.ndim != 3 or tx.data.shape[1] != tw.data.shape[1]:
        raise ShapeError("conv1d", tx.data.shape, tw.data.shape)
    k = tw.data.shape[2]
    if k % 2 != 1:
        raise ShapeError("conv1d", tx.data.shape, tw.data.shape)
    if tb is not None and tb.data.shape != (tw.data.shape[0],):
        raise ShapeError("conv1d", tw.data.shape, tb.data.shape)
    out = Tensor(conv1d_forward(tx.data, tw.data, None if tb is None else tb.data))

    if tb is None:

        def bwd(g, tx=tx, tw=tw, k=k):
            return conv1d_grad_input(g, tw.data), conv1d_grad_weight(g, tx.data, k)

        return _record("conv1d", (tx, tw), out, bwd)

    def bwd(g, tx=tx, tw=tw, k=k):
        return (
            conv1d_grad_input(g, tw.data),
            conv1d_grad_weight(g, tx.data, k),
            g.sum(axis=(0, 2)),
        )

    return _record("conv1d", (tx, tw, tb), out, bwd)


def group_norm(x, gamma, beta, groups: int, eps: float = 1e-5) -> Tensor:
    """Normalize [B, C, L] within channel groups, then scale/shift per channel."""
    tx, tg, tb = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if tx.data.ndim != 3:
        raise ShapeError("group_norm", tx.data.shape)
    b, c, length = tx.data.shape
    if c % groups != 0:
        raise ShapeError("group_norm", tx.data.shape, (groups,))
    if tg.data.shape != (c,) or tb.data.shape != (c,):
        raise ShapeError("group_norm", tx.data.shape, tg.data.shape, tb.data.shape)
    grouped = tx.data.reshape(b, groups, c // groups * length)
    mu = grouped.mean(axis=2, keepdims=True)
    var = grouped.var(axis=2, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((grouped - mu) * inv).reshape(b, c, length)
    out = Tensor(xhat * tg.data[None, :, None] + tb.data[None, :, None])

    def bwd(g, xhat=xhat, inv=inv, gamma=tg.data, b=b, c=c, length=length, groups=groups):
        dxhat = g * gamma[None, :, None]
        dxg = dxhat.reshape(b, groups, c // groups * length)
        xhg = xhat.reshape(b, groups, c // groups * length)
        m1 = dxg.mean(axis=2, keepdims=True)
        m2 = (dxg * xhg).mean(axis=2, keepdims=True)
        dx = (dxg - m1 - xhg * m2) * inv
        return (
            dx.reshape(b, c, length),
            (g * xhat).sum(axis=(0, 2)),
            g.sum(axis=(0, 2)),
        )

    return _record("group_norm", (tx, tg, tb), out, bwd)
