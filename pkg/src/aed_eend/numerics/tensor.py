"""Dense tensors with define-by-run reverse-mode differentiation.

Operations record themselves on the innermost active :class:`Tape` whenever
one of their inputs requires a gradient. Outside a tape nothing is recorded,
which is the inference path.

Broadcasting is deliberately limited to two cases: equal shapes, and a
scalar (python number or 0-d tensor) combined with a tensor. Adding a bias
vector to every row of a matrix is the separate op :func:`add_row`.
"""

from __future__ import annotations

import threading

import numpy as np

from ..errors import ContractError, DomainError, ShapeError

_PRECISIONS = {64: np.float64, 32: np.float32}
_dtype = np.float64


def set_precision(bits: int) -> None:
    """Select the build-wide float width (64 or 32) for new tensors."""
    global _dtype
    if bits not in _PRECISIONS:
        raise ValueError(f"precision must be 32 or 64, got {bits}")
    _dtype = _PRECISIONS[bits]


def get_dtype():
    return _dtype


class Tensor:
    """Row-major array plus gradient bookkeeping.

    The value array is never mutated after construction; only ``grad`` is
    accumulated into during :func:`backward`.
    """

    __slots__ = ("data", "requires_grad", "grad", "is_leaf")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=_dtype, order="C")
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.is_leaf = True

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def values(self) -> np.ndarray:
        return self.data.reshape(-1)

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # Operator sugar; each maps onto a recorded op below.
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add_scalar(scale(self, -1.0), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    @property
    def T(self):
        return transpose(self)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def zeros(shape, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros(shape, dtype=_dtype), requires_grad=requires_grad)


class _Entry:
    __slots__ = ("out", "inputs", "backward_fn")

    def __init__(self, out, inputs, backward_fn):
        self.out = out
        self.inputs = inputs
        self.backward_fn = backward_fn


_local = threading.local()


def _stack() -> list:
    st = getattr(_local, "tapes", None)
    if st is None:
        st = _local.tapes = []
    return st


class Tape:
    """Ordered record of differentiable operations.

    Use as a context manager around the forward pass, then hand it to
    :func:`backward`. A tape belongs to the thread that opened it.
    """

    def __init__(self):
        self.entries: list[_Entry] = []

    def __enter__(self):
        _stack().append(self)
        return self

    def __exit__(self, *exc):
        st = _stack()
        if st and st[-1] is self:
            st.pop()
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, out: Tensor, inputs, backward_fn) -> None:
        out.requires_grad = True
        out.is_leaf = False
        self.entries.append(_Entry(out, tuple(inputs), backward_fn))

    def reset(self) -> None:
        self.entries.clear()


def active_tape():
    st = _stack()
    return st[-1] if st else None


def _record(out: Tensor, inputs, backward_fn) -> Tensor:
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``grad`` on every requires-grad leaf reachable from ``loss``.

    The tape is consumed: it is empty afterwards.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any requires_grad tensor")
    grads = {id(loss): np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        g = grads.pop(id(entry.out), None)
        if g is None:
            continue
        in_grads = entry.backward_fn(g)
        for t, gi in zip(entry.inputs, in_grads):
            if gi is None or not t.requires_grad:
                continue
            if t.is_leaf:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
            else:
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
    if loss.is_leaf:
        loss.grad = np.ones_like(loss.data)
    tape.reset()


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x))


def _reduce_to(g: np.ndarray, shape) -> np.ndarray:
    # gradient of a scalar operand broadcast over a tensor is the total sum
    if g.shape == shape:
        return g
    return np.asarray(g.sum(), dtype=g.dtype).reshape(shape)


def _check_pair(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape == b.shape or a.data.ndim == 0 or b.data.ndim == 0:
        return
    raise ShapeError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


# --------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = Tensor(a.data @ b.data)

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _record(out, (a, b), bw)


def transpose(a: Tensor) -> Tensor:
    if a.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {a.shape}")
    out = Tensor(a.data.T)
    return _record(out, (a,), lambda g: (g.T,))


# --------------------------------------------------------------------------
# elementwise


def add(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "add")
    out = Tensor(a.data + b.data)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(g, b.shape)

    return _record(out, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "sub")
    out = Tensor(a.data - b.data)

    def bw(g):
        return _reduce_to(g, a.shape), _reduce_to(-g, b.shape)

    return _record(out, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = _as_tensor(a), _as_tensor(b)
    _check_pair(a, b, "mul")
    out = Tensor(a.data * b.data)

    def bw(g):
        return _reduce_to(g * b.data, a.shape), _reduce_to(g * a.data, b.shape)

    return _record(out, (a, b), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(a.data * c)
    return _record(out, (a,), lambda g: (g * c,))


def add_scalar(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data + float(c))
    return _record(out, (a,), lambda g: (g,))


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # two-branch form avoids exp overflow for large |x|
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(x.dtype, copy=False)
    out = Tensor(y)
    return _record(out, (a,), lambda g: (g * y * (1.0 - y),))


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor(np.where(mask, a.data, 0.0))
    return _record(out, (a,), lambda g: (g * mask,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise DomainError("log of a non-positive value")
    out = Tensor(np.log(a.data))
    return _record(out, (a,), lambda g: (g / a.data,))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clip into [lo, hi]; the gradient is zero wherever clipping was active."""
    inside = (a.data >= lo) & (a.data <= hi)
    out = Tensor(np.clip(a.data, lo, hi))
    return _record(out, (a,), lambda g: (g * inside,))


def dropout(a: Tensor, p: float, rng) -> Tensor:
    if p <= 0.0 or rng is None:
        return a
    keep = (rng.random(a.shape) >= p) / (1.0 - p)
    keep = keep.astype(a.data.dtype)
    out = Tensor(a.data * keep)
    return _record(out, (a,), lambda g: (g * keep,))


_ELEMENTWISE = {
    "sigmoid": sigmoid,
    "relu": relu,
    "add": add,
    "mul": mul,
    "log": log,
    "scale": scale,
}


def elementwise(op: str, *args) -> Tensor:
    """Dispatch one of sigmoid, relu, add, mul, log, scale by name."""
    try:
        fn = _ELEMENTWISE[op]
    except KeyError:
        raise ContractError(f"unknown elementwise op {op!r}") from None
    return fn(*args)


# --------------------------------------------------------------------------
# row-structured ops


def add_row(x: Tensor, b: Tensor) -> Tensor:
    """Add vector ``b`` (length n) to every row of ``x`` (m x n)."""
    if x.data.ndim != 2 or b.shape != (x.shape[1],):
        raise ShapeError(f"add_row: {x.shape} and {b.shape}")
    out = Tensor(x.data + b.data)
    return _record(out, (x, b), lambda g: (g, g.sum(axis=0)))


def softmax_rows(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=1, keepdims=True)
    assert not np.isnan(y).any() or np.isnan(x.data).any()
    out = Tensor(y)

    def bw(g):
        return (y * (g - (g * y).sum(axis=1, keepdims=True)),)

    return _record(out, (x,), bw)


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-5) -> Tensor:
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    n = x.shape[1]
    if gain.shape != (n,) or bias.shape != (n,):
        raise ShapeError(f"layer_norm: x {x.shape}, gain {gain.shape}, bias {bias.shape}")
    mu = x.data.mean(axis=1, keepdims=True)
    xc = x.data - mu
    var = (xc * xc).mean(axis=1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    out = Tensor(xhat * gain.data + bias.data)

    def bw(g):
        dxhat = g * gain.data
        dx = inv * (
            dxhat
            - dxhat.mean(axis=1, keepdims=True)
            - xhat * (dxhat * xhat).mean(axis=1, keepdims=True)
        )
        return dx, (g * xhat).sum(axis=0), g.sum(axis=0)

    return _record(out, (x, gain, bias), bw)


def sum_all(x: Tensor) -> Tensor:
    out = Tensor(np.asarray(x.data.sum()))
    shape = x.shape
    return _record(out, (x,), lambda g: (np.full(shape, g, dtype=x.data.dtype),))


def mean_all(x: Tensor) -> Tensor:
    return scale(sum_all(x), 1.0 / x.size)


def mean_rows(x: Tensor) -> Tensor:
    """Column-wise mean of a matrix, returned as a 1 x n matrix."""
    m = x.shape[0]
    if m == 0:
        raise ContractError("mean over zero rows")
    out = Tensor(x.data.mean(axis=0, keepdims=True))
    return _record(out, (x,), lambda g: (np.repeat(g / m, m, axis=0),))


def take_rows(x: Tensor, idx) -> Tensor:
    idx = np.asarray(idx, dtype=np.intp)
    out = Tensor(x.data[idx])
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        np.add.at(full, idx, g)
        return (full,)

    return _record(out, (x,), bw)


def concat_rows(parts) -> Tensor:
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=0))
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        return tuple(g[bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record(out, parts, bw)


def slice_cols(x: Tensor, start: int, stop: int) -> Tensor:
    out = Tensor(x.data[:, start:stop])
    shape = x.shape

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[:, start:stop] = g
        return (full,)

    return _record(out, (x,), bw)


def concat_cols(parts) -> Tensor:
    parts = list(parts)
    out = Tensor(np.concatenate([p.data for p in parts], axis=1))
    bounds = np.cumsum([0] + [p.shape[1] for p in parts])

    def bw(g):
        return tuple(g[:, bounds[i]:bounds[i + 1]] for i in range(len(parts)))

    return _record(out, parts, bw)
