"""Dense tensors with define-by-run reverse-mode differentiation.

Every differentiable operation appends a :class:`Node` to the active
:class:`Tape` when at least one input requires a gradient. ``backward`` walks
the tape once in reverse order and leaves gradients on the leaf tensors.

    >>> w = Tensor([3.0], requires_grad=True, precision=Precision.F64)
    >>> with Tape() as tape:
    ...     loss = reduce_sum(w * w)
    >>> backward(loss, tape)
    >>> w.grad
    array([6.])
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np


class Precision(enum.Enum):
    F32 = "f32"
    F64 = "f64"

    @property
    def dtype(self):
        return np.float32 if self is Precision.F32 else np.float64

    @classmethod
    def of(cls, dtype) -> "Precision":
        dtype = np.dtype(dtype)
        if dtype == np.float32:
            return cls.F32
        if dtype == np.float64:
            return cls.F64
        raise TypeError(f"unsupported dtype {dtype}")


class PrecisionError(TypeError):
    """Tensors of different precision were combined in one graph."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf while finite checking was enabled."""


_CHECK_FINITE = False


def set_check_finite(enabled: bool) -> None:
    """Toggle the per-op NaN/Inf scan (off by default)."""
    global _CHECK_FINITE
    _CHECK_FINITE = bool(enabled)


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_tape", "name")

    def __init__(self, data, requires_grad=False, precision: Optional[Precision] = None, name=None):
        if isinstance(data, Tensor):
            data = data.data
        if precision is None:
            arr = np.asarray(data)
            dtype = arr.dtype if arr.dtype in (np.float32, np.float64) else np.float32
        else:
            dtype = precision.dtype
        arr = np.ascontiguousarray(data, dtype=dtype)
        if arr.size == 0:
            raise ValueError("tensors must have positive extents")
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad: Optional[np.ndarray] = None
        self._tape: Optional[Tape] = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def precision(self) -> Precision:
        return Precision.of(self.data.dtype)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return elementwise("add", self, other)

    def __sub__(self, other):
        return elementwise("sub", self, other)

    def __mul__(self, other):
        if isinstance(other, (int, float)):
            return scale(self, other)
        return elementwise("mul", self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def _grad_tape(inputs: Sequence[Tensor]) -> Optional["Tape"]:
    if not any(t.requires_grad for t in inputs):
        return None
    return _TAPES[-1] if _TAPES else None


@dataclass(eq=False)
class Node:
    op: str
    inputs: tuple
    output: Tensor
    backward: Callable[[np.ndarray], tuple]


@dataclass(eq=False)
class Tape:
    """Ordered record of differentiable operations for one forward pass."""

    nodes: list = field(default_factory=list)

    def __enter__(self):
        _TAPES.append(self)
        return self

    def __exit__(self, *exc):
        _TAPES.remove(self)
        return False

    def record(self, op, inputs, output, backward_fn):
        output._tape = self
        output.requires_grad = True
        self.nodes.append(Node(op, tuple(inputs), output, backward_fn))

    def clear(self):
        for node in self.nodes:
            node.output._tape = None
        self.nodes.clear()

    def backward(self, loss: Tensor):
        backward(loss, self)


_TAPES: list = []


def no_grad_tape():
    """Context manager that disables recording (used for evaluation)."""
    return _Paused()


class _Paused:
    def __enter__(self):
        self._saved = list(_TAPES)
        _TAPES.clear()

    def __exit__(self, *exc):
        _TAPES.extend(self._saved)
        return False


def check_same_precision(*tensors: Tensor) -> np.dtype:
    dtype = tensors[0].data.dtype
    for t in tensors[1:]:
        if t.data.dtype != dtype:
            raise PrecisionError(f"mixed precision in one graph: {dtype} vs {t.data.dtype}")
    return dtype


def make_result(op: str, data: np.ndarray, inputs: Sequence[Tensor], backward_fn) -> Tensor:
    """Wrap ``data`` as the output of ``op`` and record it on the active tape."""
    if _CHECK_FINITE and not np.all(np.isfinite(data)):
        raise NonFiniteError(f"{op} produced non-finite values")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.requires_grad = False
    out.grad = None
    out._tape = None
    out.name = None
    tape = _grad_tape(inputs)
    if tape is not None:
        tape.record(op, inputs, out, backward_fn)
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Accumulate d(loss)/d(leaf) into ``leaf.grad`` for every leaf on ``tape``."""
    if loss.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss._tape is not tape:
        raise ValueError("loss was not produced through this tape")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(tape.nodes):
        g = grads.pop(id(node.output), None)
        if g is None:
            continue
        for inp, gi in zip(node.inputs, node.backward(g)):
            if gi is None or not inp.requires_grad:
                continue
            key = id(inp)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
            if inp._tape is None:
                leaves[key] = inp
    for key, leaf in leaves.items():
        g = grads[key].astype(leaf.data.dtype, copy=False)
        leaf.grad = g if leaf.grad is None else leaf.grad + g
    tape.clear()


# -- elementwise ---------------------------------------------------------------

def _broadcast_view(a: Tensor, b: Tensor) -> np.ndarray:
    """Return b's data shaped for broadcasting against a, per the channel rule."""
    if a.shape == b.shape:
        return b.data
    if a.ndim == 4:
        n, c = a.shape[:2]
        if b.shape == (c,):
            return b.data.reshape(1, c, 1, 1)
        if b.ndim == 4 and b.shape[1] == c and b.shape[2:] == (1, 1) and b.shape[0] in (1, n):
            return b.data
    raise ValueError(f"cannot broadcast {b.shape} against {a.shape}")


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    if g.shape == tuple(shape):
        return g
    if len(shape) == 1:
        return g.sum(axis=(0, 2, 3))
    axes = (0, 2, 3) if shape[0] == 1 else (2, 3)
    return g.sum(axis=axes, keepdims=True)


def elementwise(op: str, a: Tensor, b: Tensor) -> Tensor:
    """``a op b`` for op in {add, sub, mul}; b may broadcast as [C] or [N,C,1,1]."""
    check_same_precision(a, b)
    bd = _broadcast_view(a, b)
    if op == "add":
        data = a.data + bd
    elif op == "sub":
        data = a.data - bd
    elif op == "mul":
        data = a.data * bd
    else:
        raise ValueError(f"unknown elementwise op {op!r}")
    b_shape = b.shape

    def grad_fn(g):
        if op == "add":
            ga, gb = g, g
        elif op == "sub":
            ga, gb = g, -g
        else:
            ga, gb = g * bd, g * a.data
        return ga, _unbroadcast(gb, b_shape)

    return make_result(op, data, (a, b), grad_fn)


def add(a, b):
    return elementwise("add", a, b)


def sub(a, b):
    return elementwise("sub", a, b)


def mul(a, b):
    return elementwise("mul", a, b)


def scale(a: Tensor, factor: float, shift: float = 0.0) -> Tensor:
    """``factor * a + shift`` with Python scalars."""
    data = a.data * a.data.dtype.type(factor)
    if shift:
        data = data + a.data.dtype.type(shift)
    return make_result("scale", data, (a,), lambda g: (g * factor,))


def log(a: Tensor) -> Tensor:
    if np.any(a.data <= 0):
        raise FloatingPointError("log of non-positive value")
    return make_result("log", np.log(a.data), (a,), lambda g: (g / a.data,))


def reshape(a: Tensor, shape) -> Tensor:
    old = a.shape
    return make_result("reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(old),))


# -- reductions ----------------------------------------------------------------

def _axes(a: Tensor, axes):
    if axes is None:
        return tuple(range(a.ndim))
    axes = (axes,) if isinstance(axes, int) else tuple(axes)
    norm = []
    for ax in axes:
        if not -a.ndim <= ax < a.ndim:
            raise ValueError(f"axis {ax} out of range for shape {a.shape}")
        norm.append(ax % a.ndim)
    for ax in norm:
        if a.shape[ax] == 0:
            raise ValueError("reduction over a zero-extent axis")
    return tuple(sorted(set(norm)))


def reduce(op: str, a: Tensor, axes=None) -> Tensor:
    """Sum or mean over ``axes`` (all axes when None); reduced axes are dropped."""
    axes = _axes(a, axes)
    count = int(np.prod([a.shape[ax] for ax in axes])) if axes else 1
    if op == "sum":
        data = a.data.sum(axis=axes)
        factor = 1.0
    elif op == "mean":
        data = a.data.mean(axis=axes)
        factor = 1.0 / count
    else:
        raise ValueError(f"unknown reduction {op!r}")
    kept = tuple(1 if ax in axes else n for ax, n in enumerate(a.shape))
    in_shape = a.shape

    def grad_fn(g):
        g = np.broadcast_to(np.reshape(g, kept), in_shape)
        return (g * factor if factor != 1.0 else np.array(g),)

    return make_result(op, np.asarray(data, dtype=a.dtype), (a,), grad_fn)


def reduce_sum(a, axes=None):
    return reduce("sum", a, axes)


def reduce_mean(a, axes=None):
    return reduce("mean", a, axes)
