"""Immutable float64 tensors with a define-by-run reverse-mode tape.

Operations record onto the tape carried by their inputs; tensors without a tape
are constants. A fresh :class:`Tape` is built for every forward pass::

    tape = Tape()
    x = tape.leaf(Tensor([1.0, 2.0]))
    loss = reduce_sum(square(x))
    grads = backward(tape, loss)
    grads[x.node]  # Tensor([2., 4.])
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import (
    ContractError,
    DomainError,
    GradCheckError,
    NonFiniteError,
    ShapeMismatchError,
)
from .regions import NormRegion, apply_average

__all__ = [
    "Tensor", "Tape", "Node", "as_tensor", "backward", "gradients", "grad_check",
    "elementwise", "add", "sub", "mul", "div", "neg", "abs_", "sqrt", "tanh", "sigmoid",
    "relu", "square", "exp", "log", "matmul", "conv2d", "region_mean", "reduce_sum",
    "reduce_mean", "reshape", "slice_axis", "concat", "avg_pool2d", "log_softmax",
]


class Tensor:
    """Dense row-major float64 array; read-only once built."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, *, tape: "Tape | None" = None, node: int | None = None):
        arr = np.array(data, dtype=np.float64)
        if any(n < 1 for n in arr.shape):
            raise ContractError(f"tensor extents must be >= 1, got shape {arr.shape}")
        if not np.isfinite(arr).all():
            raise NonFiniteError("tensor contains NaN or Inf")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "tape", tape)
        object.__setattr__(self, "node", node)

    def __setattr__(self, name, value):
        raise AttributeError("Tensor is immutable")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.size != 1:
            raise ContractError(f"expected a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return self if self.tape is None else Tensor(self.data)

    def __repr__(self):
        tag = f", node={self.node}" if self.tape is not None else ""
        return f"Tensor({np.array2string(self.data, precision=6)}{tag})"

    def __len__(self):
        return self.shape[0]

    __add__ = lambda self, o: add(self, o)  # noqa: E731
    __radd__ = lambda self, o: add(o, self)  # noqa: E731
    __sub__ = lambda self, o: sub(self, o)  # noqa: E731
    __rsub__ = lambda self, o: sub(o, self)  # noqa: E731
    __mul__ = lambda self, o: mul(self, o)  # noqa: E731
    __rmul__ = lambda self, o: mul(o, self)  # noqa: E731
    __truediv__ = lambda self, o: div(self, o)  # noqa: E731
    __rtruediv__ = lambda self, o: div(o, self)  # noqa: E731
    __matmul__ = lambda self, o: matmul(self, o)  # noqa: E731
    __neg__ = lambda self: neg(self)  # noqa: E731


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple
    shape: tuple
    saved: tuple = ()
    vjp: Callable | None = None


class Tape:
    """Append-only record of primitive operations for one forward pass."""

    def __init__(self):
        self.nodes: list[Node] = []

    def __len__(self):
        return len(self.nodes)

    def leaf(self, t) -> Tensor:
        t = as_tensor(t)
        node = Node(len(self.nodes), "leaf", (), t.shape)
        self.nodes.append(node)
        return Tensor(t.data, tape=self, node=node.id)

    def record(self, op: str, out: np.ndarray, inputs: Sequence[Tensor], saved: tuple, vjp: Callable) -> Tensor:
        ids = tuple(t.node if t.tape is self else None for t in inputs)
        node = Node(len(self.nodes), op, ids, out.shape, saved, vjp)
        self.nodes.append(node)
        return Tensor(out, tape=self, node=node.id)


def _emit(op: str, out: np.ndarray, inputs: Sequence[Tensor], vjp: Callable, saved: tuple = ()) -> Tensor:
    tapes = {id(t.tape): t.tape for t in inputs if t.tape is not None}
    if not tapes:
        return Tensor(out)
    if len(tapes) > 1:
        raise ContractError(f"{op}: inputs recorded on different tapes")
    (tape,) = tapes.values()
    return tape.record(op, out, inputs, saved, vjp)


def backward(tape: Tape, loss) -> dict[int, Tensor]:
    """Gradients of a single-element ``loss`` for every node it depends on.

    Every leaf appears in the result, with zeros when unreachable from the loss.
    """
    loss_id = loss.node if isinstance(loss, Tensor) else int(loss)
    if loss_id is None or not 0 <= loss_id < len(tape.nodes):
        raise ContractError("loss is not recorded on this tape")
    root = tape.nodes[loss_id]
    if any(n != 1 for n in root.shape):
        raise ContractError(f"loss must be scalar (all extents 1), got shape {root.shape}")
    grads: dict[int, np.ndarray] = {loss_id: np.ones(root.shape)}
    for node in reversed(tape.nodes[: loss_id + 1]):
        g = grads.get(node.id)
        if g is None or node.vjp is None:
            continue
        for inp, gi in zip(node.inputs, node.vjp(g, *node.saved)):
            if inp is None or gi is None:
                continue
            if inp in grads:
                grads[inp] = grads[inp] + gi
            else:
                grads[inp] = gi
    out = {k: Tensor(v) for k, v in grads.items()}
    for node in tape.nodes:
        if node.op == "leaf" and node.id not in out:
            out[node.id] = Tensor(np.zeros(node.shape))
    return out


def gradients(f: Callable[..., Tensor], *args) -> tuple[Tensor, list[Tensor]]:
    """Evaluate ``f(*args)`` on a fresh tape; return the value and its gradient per argument."""
    tape = Tape()
    leaves = [tape.leaf(a) for a in args]
    value = f(*leaves)
    grads = backward(tape, value)
    return value.detach(), [grads[leaf.node] for leaf in leaves]


# ---------------------------------------------------------------- broadcasting

def _broadcast_shape(a: tuple, b: tuple) -> tuple:
    if a == b:
        return a
    if a == ():
        return b
    if b == ():
        return a
    if len(a) != len(b):
        raise ShapeMismatchError(f"cannot broadcast {a} with {b}: ranks differ")
    out = []
    for x, y in zip(a, b):
        if x != y and 1 not in (x, y):
            raise ShapeMismatchError(f"cannot broadcast {a} with {b}")
        out.append(max(x, y))
    return tuple(out)


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    if shape == ():
        return np.asarray(g.sum())
    axes = tuple(i for i, (s, n) in enumerate(zip(shape, g.shape)) if s == 1 and n != 1)
    return g.sum(axis=axes, keepdims=True)


# ---------------------------------------------------------------- elementwise

def _binary(op: str, a, b, fwd, da, db) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape(a.shape, b.shape)
    out = fwd(a.data, b.data)
    sa, sb = a.shape, b.shape

    def vjp(g, x, y):
        return _unbroadcast(da(g, x, y), sa), _unbroadcast(db(g, x, y), sb)

    return _emit(op, out, (a, b), vjp, (a.data, b.data))


def add(a, b) -> Tensor:
    return _binary("add", a, b, np.add, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary("sub", a, b, np.subtract, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary("mul", a, b, np.multiply,
                   lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    b = as_tensor(b)
    if np.any(b.data == 0.0):
        raise DomainError("division by zero")
    return _binary("div", a, b, np.divide,
                   lambda g, x, y: g / y, lambda g, x, y: -g * x / (y * y))


def _unary(op: str, a, fwd, dfn) -> Tensor:
    a = as_tensor(a)
    out = fwd(a.data)

    def vjp(g, x, y):
        return (dfn(g, x, y),)

    return _emit(op, out, (a,), vjp, (a.data, out))


def neg(a) -> Tensor:
    return _unary("neg", a, np.negative, lambda g, x, y: -g)


def abs_(a) -> Tensor:
    # subgradient 0 at exactly 0
    return _unary("abs", a, np.abs, lambda g, x, y: g * np.sign(x))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0.0):
        raise DomainError("sqrt of a negative value")
    return _unary("sqrt", a, np.sqrt, lambda g, x, y: g * 0.5 / y)


def tanh(a) -> Tensor:
    return _unary("tanh", a, np.tanh, lambda g, x, y: g * (1.0 - y * y))


def _sigmoid(x: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid(a) -> Tensor:
    return _unary("sigmoid", a, _sigmoid, lambda g, x, y: g * y * (1.0 - y))


def relu(a) -> Tensor:
    return _unary("relu", a, lambda x: np.maximum(x, 0.0), lambda g, x, y: g * (x > 0))


def square(a) -> Tensor:
    return _unary("square", a, np.square, lambda g, x, y: 2.0 * g * x)


def exp(a) -> Tensor:
    return _unary("exp", a, np.exp, lambda g, x, y: g * y)


def log(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data <= 0.0):
        raise DomainError("log of a non-positive value")
    return _unary("log", a, np.log, lambda g, x, y: g / x)


_UNARY = {"abs": abs_, "sqrt": sqrt, "tanh": tanh, "sigmoid": sigmoid, "relu": relu,
          "square": square, "neg": neg, "exp": exp, "log": log}
_BINARY = {"add": add, "sub": sub, "mul": mul, "div": div}


def elementwise(op: str, a, b=None) -> Tensor:
    """Dispatch by name; binary ops require ``b``."""
    if op in _BINARY:
        if b is None:
            raise ContractError(f"{op} needs two operands")
        return _BINARY[op](a, b)
    if op in _UNARY:
        if b is not None:
            raise ContractError(f"{op} takes one operand")
        return _UNARY[op](a)
    raise ContractError(f"unknown elementwise op {op!r}")


# ---------------------------------------------------------------- linear algebra

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return _emit("matmul", a.data @ b.data, (a, b),
                 lambda g, x, y: (g @ y.T, x.T @ g), (a.data, b.data))


def _windows(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    v = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    return v[:, :, : (ho - 1) * stride + 1 : stride, : (wo - 1) * stride + 1 : stride]


def conv2d(x, w, pad: int = 0, stride: int = 1) -> Tensor:
    """Zero-padded cross-correlation of ``N x C x H x W`` input with ``F x C x k x k`` filters."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeMismatchError(f"conv2d expects 4-d input and weight, got {x.shape}, {w.shape}")
    n, c, h, wd = x.shape
    f, cw, k, k2 = w.shape
    if cw != c or k != k2 or k % 2 == 0:
        raise ShapeMismatchError(f"conv2d: weight {w.shape} incompatible with input {x.shape} (square odd kernel required)")
    if pad < 0 or stride < 1:
        raise ContractError("conv2d: pad must be >= 0 and stride >= 1")
    if k > h + 2 * pad or k > wd + 2 * pad:
        raise ShapeMismatchError(f"conv2d: kernel {k} exceeds padded input {h + 2 * pad}x{wd + 2 * pad}")
    ho = (h + 2 * pad - k) // stride + 1
    wo = (wd + 2 * pad - k) // stride + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = _windows(xp, k, stride, ho, wo)
    out = np.einsum("nchwij,fcij->nfhw", cols, w.data, optimize=True)

    def vjp(g, xpad, wt):
        cols = _windows(xpad, k, stride, ho, wo)
        dw = np.einsum("nchwij,nfhw->fcij", cols, g, optimize=True)
        dcols = np.einsum("nfhw,fcij->nchwij", g, wt, optimize=True)
        dxp = np.zeros_like(xpad)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += dcols[..., i, j]
        return dxp[:, :, pad : pad + h, pad : pad + wd], dw

    return _emit("conv2d", out, (x, w), vjp, (xp, w.data))


def region_mean(x, region: NormRegion) -> Tensor:
    """Mean over each position's accumulation set, broadcast back to input shape."""
    x = as_tensor(x)
    out = apply_average(x.data, region)
    return _emit("region_mean", out, (x,), lambda g: (apply_average(g, region, transpose=True),))


# ---------------------------------------------------------------- reductions & shape

def _axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    return tuple(a % ndim for a in ((axis,) if isinstance(axis, int) else axis))


def reduce_sum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    axes = _axes(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)
    shape = a.shape

    def vjp(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)

    return _emit("sum", np.asarray(out), (a,), vjp)


def reduce_mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    count = int(np.prod([a.shape[i] for i in _axes(axis, a.ndim)]))
    return mul(reduce_sum(a, axis, keepdims), 1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise ShapeMismatchError(str(exc)) from None
    return _emit("reshape", out, (a,), lambda g: (g.reshape(old),))


def slice_axis(a, axis: int, start: int, stop: int) -> Tensor:
    a = as_tensor(a)
    axis %= a.ndim
    if not 0 <= start < stop <= a.shape[axis]:
        raise ShapeMismatchError(f"slice [{start}:{stop}) out of range for axis of extent {a.shape[axis]}")
    idx = (slice(None),) * axis + (slice(start, stop),)
    shape = a.shape

    def vjp(g):
        full = np.zeros(shape)
        full[idx] = g
        return (full,)

    return _emit("slice", a.data[idx].copy(), (a,), vjp)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = [as_tensor(p) for p in parts]
    if not parts:
        raise ContractError("concat needs at least one tensor")
    axis %= parts[0].ndim
    try:
        out = np.concatenate([p.data for p in parts], axis=axis)
    except ValueError as exc:
        raise ShapeMismatchError(str(exc)) from None
    bounds = np.cumsum([0] + [p.shape[axis] for p in parts])

    def vjp(g):
        return tuple(np.take(g, range(lo, hi), axis=axis) for lo, hi in zip(bounds[:-1], bounds[1:]))

    return _emit("concat", out, parts, vjp)


def avg_pool2d(x, size: int = 2) -> Tensor:
    """Non-overlapping mean pooling; trailing rows/columns that do not fill a window are dropped."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    ho, wo = h // size, w // size
    if ho < 1 or wo < 1:
        raise ShapeMismatchError(f"avg_pool2d: {h}x{w} smaller than pool size {size}")
    crop = x.data[:, :, : ho * size, : wo * size]
    out = crop.reshape(n, c, ho, size, wo, size).mean(axis=(3, 5))

    def vjp(g):
        full = np.zeros((n, c, h, w))
        up = np.repeat(np.repeat(g, size, axis=2), size, axis=3) / (size * size)
        full[:, :, : ho * size, : wo * size] = up
        return (full,)

    return _emit("avg_pool2d", out, (x,), vjp)


def log_softmax(a) -> Tensor:
    """Log-softmax over the last axis, max-shifted for stability."""
    a = as_tensor(a)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    out = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))

    def vjp(g, y):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _emit("log_softmax", out, (a,), vjp, (out,))


# ---------------------------------------------------------------- gradient checking

def _scalar_value(f, data: np.ndarray, coordinate: int) -> float:
    try:
        out = f(Tensor(data))
    except (NonFiniteError, DomainError) as exc:
        raise GradCheckError(f"non-finite evaluation at coordinate {coordinate}: {exc}", coordinate) from exc
    val = out.item() if isinstance(out, Tensor) else float(out)
    if not np.isfinite(val):
        raise GradCheckError(f"non-finite evaluation at coordinate {coordinate}", coordinate)
    return val


def numeric_gradient(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> np.ndarray:
    """Central differences of scalar ``f`` at ``x``, one coordinate at a time."""
    base = as_tensor(x).numpy()
    grad = np.empty(base.size)
    for i in range(base.size):
        hi = base.copy()
        hi.flat[i] += eps
        lo = base.copy()
        lo.flat[i] -= eps
        grad[i] = (_scalar_value(f, hi, i) - _scalar_value(f, lo, i)) / (2.0 * eps)
    return grad.reshape(base.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    a, n = np.asarray(analytic, float), np.asarray(numeric, float)
    return float(np.max(np.abs(a - n) / np.maximum(1e-8, np.abs(a) + np.abs(n))))


def grad_check(f: Callable[[Tensor], Tensor], x, eps: float = 1e-5) -> float:
    """Max coordinatewise relative error between tape gradient and central differences."""
    if not 0.0 < eps <= 1e-2:
        raise ContractError(f"eps must lie in (0, 1e-2], got {eps}")
    x = as_tensor(x).detach()
    _, (analytic,) = gradients(f, x)
    return relative_error(analytic.data, numeric_gradient(f, x, eps))
