"""Tape-based reverse-mode differentiation over dense float64 numpy arrays.

Operations record themselves on the innermost active :class:`Tape`.  Outside
a tape nothing is recorded, which is how inference runs.

    >>> w = Tensor([[1.0, 2.0]], requires_grad=True)
    >>> with Tape() as tape:
    ...     loss = sum_(sigmoid(w))
    >>> tape.backward(loss)
    >>> w.grad.shape
    (1, 2)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

DTYPE = np.float64

_TAPES: list["Tape"] = []


class ShapeError(ValueError):
    pass


class GradientError(RuntimeError):
    pass


class Tensor:
    """Dense array with an accumulated-gradient slot."""

    __slots__ = ("data", "grad", "requires_grad", "name", "__weakref__")

    # numpy should defer to our reflected operators
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=DTYPE)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.name = name

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
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        if self.data.size != 1:
            raise GradientError(f"expected a scalar tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

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

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return sum_(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        return mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


@dataclass
class _Node:
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


@dataclass
class Tape:
    """Ordered record of operations; inputs always precede their consumers."""

    nodes: list[_Node] = field(default_factory=list)

    def __enter__(self) -> "Tape":
        _TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _TAPES.remove(self)

    def __len__(self) -> int:
        return len(self.nodes)

    def record(self, inputs, output, backward_fn) -> None:
        self.nodes.append(_Node(tuple(inputs), output, backward_fn))

    def backward(self, loss: Tensor) -> None:
        backward(loss, self)


def current_tape() -> Tape | None:
    return _TAPES[-1] if _TAPES else None


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate ``.grad`` of every tensor on ``tape`` with d(loss)/d(tensor).

    Leaf gradients accumulate across calls; gradients of intermediate
    tensors are overwritten so a repeated call never double counts.
    """
    if loss.size != 1:
        raise GradientError(f"backward needs a scalar loss, got shape {loss.shape}")
    produced = {id(node.output) for node in tape.nodes}
    if id(loss) not in produced:
        raise GradientError("loss was not produced on this tape")

    pending: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[int, Tensor] = {}
    for node in reversed(tape.nodes):
        g = pending.pop(id(node.output), None)
        if g is None:
            node.output.grad = np.zeros_like(node.output.data)
        else:
            node.output.grad = g
            grads = node.backward(g)
        for k, t in enumerate(node.inputs):
            if not t.requires_grad:
                continue
            key = id(t)
            if key not in produced:
                leaves[key] = t
            if g is None:
                continue
            gi = grads[k]
            if gi is None:
                continue
            if gi.shape != t.shape:
                raise ShapeError(f"gradient shape {gi.shape} does not match tensor shape {t.shape}")
            if key in produced:
                prev = pending.get(key)
                pending[key] = gi if prev is None else prev + gi
            else:
                t.grad = gi.copy() if t.grad is None else t.grad + gi
    for t in leaves.values():
        if t.grad is None:
            t.grad = np.zeros_like(t.data)


def _make(data: np.ndarray, inputs: Iterable[Tensor], backward_fn) -> Tensor:
    inputs = tuple(inputs)
    requires = any(t.requires_grad for t in inputs)
    out = Tensor(data, requires_grad=requires)
    tape = current_tape()
    if requires and tape is not None:
        tape.record(inputs, out, backward_fn)
    return out


def unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, dim in enumerate(shape):
        if dim == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# -- elementwise -------------------------------------------------------------


def _broadcast_check(a: Tensor, b: Tensor, opname: str) -> tuple[int, ...]:
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{opname}: shapes {a.shape} and {b.shape} do not broadcast") from None


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "add")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return _make(a.data + b.data, (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "sub")

    def bw(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return _make(a.data - b.data, (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "mul")

    def bw(g):
        ga = unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(a.data * b.data, (a, b), bw)


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_check(a, b, "div")
    out = a.data / b.data

    def bw(g):
        ga = unbroadcast(g / b.data, a.shape) if a.requires_grad else None
        gb = unbroadcast(-g * out / b.data, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(out, (a, b), bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def _stable_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _stable_sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x) -> Tensor:
    x = as_tensor(x)
    out = np.tanh(x.data)
    return _make(out, (x,), lambda g: (g * (1.0 - out * out),))


def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,))


def clip(x, lo: float, hi: float) -> Tensor:
    """Clamp into [lo, hi]; gradient passes only where the value was inside."""
    x = as_tensor(x)
    inside = (x.data >= lo) & (x.data <= hi)
    return _make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


# -- linear algebra and shape ------------------------------------------------


def matmul(a, b) -> Tensor:
    """``a @ b`` for a 2-D right operand; leading axes of ``a`` are batch axes."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 1 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")

    def bw(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = None
        if b.requires_grad:
            a2 = a.data.reshape(-1, a.shape[-1])
            gb = a2.T @ g.reshape(-1, g.shape[-1])
        return ga, gb

    return _make(a.data @ b.data, (a, b), bw)


def transpose(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a matrix, got shape {a.shape}")
    return _make(a.data.T, (a,), lambda g: (g.T,))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def _is_basic_index(index) -> bool:
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(a, index) -> Tensor:
    """Basic or advanced indexing; the backward scatters (and sums repeats)."""
    a = as_tensor(a)
    basic = _is_basic_index(index)

    def bw(g):
        out = np.zeros_like(a.data)
        if basic:
            out[index] += g
        else:
            np.add.at(out, index, g)
        return (out,)

    return _make(a.data[index], (a,), bw)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"concat: {[t.shape for t in tensors]}: {exc}") from None
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def bw(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(out, tensors, bw)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(f"stack: {[t.shape for t in tensors]}: {exc}") from None

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(out, tensors, bw)


def sum_(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / count)


# -- normalisations ----------------------------------------------------------


def softmax(x, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """Numerically stable softmax; entries where ``mask`` is 0 get weight 0."""
    x = as_tensor(x)
    z = x.data
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        z = np.where(mask, z, -np.inf)
    shifted = z - z.max(axis=axis, keepdims=True)
    ex = np.exp(shifted)
    out = ex / ex.sum(axis=axis, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _make(out, (x,), bw)


def softmax_temperature(m, tau: float, axis: int = 0) -> Tensor:
    """Softmax of ``m / tau``; with the default axis every column sums to 1."""
    if not tau > 0:
        raise ValueError(f"temperature must be positive, got {tau}")
    return softmax(mul(m, 1.0 / tau), axis=axis)


# -- optimisation ------------------------------------------------------------


@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(
    params: dict[str, Tensor],
    state: AdamState,
    lr: float = 1e-3,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One bias-corrected Adam update, in place on ``params`` and ``state``."""
    for name, p in params.items():
        if p.grad is None:
            raise GradientError(f"parameter {name!r} has no gradient")
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = p.grad
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


class Adam:
    def __init__(self, params: dict[str, Tensor], lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.state = AdamState()

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.grad = None

    def step(self) -> None:
        adam_step(self.params, self.state, self.lr, self.beta1, self.beta2, self.eps)
