"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Var`` wraps a NumPy array. Operations compute eagerly and, when a
``Tape`` is active, append a pullback entry per output node. ``backward``
walks the tape once in reverse and returns a gradient map keyed by Var.

Stochastic inputs (reparameterization noise, dropout masks) enter as
constant Vars: gradients flow through the deterministic transform only,
which keeps finite-difference checks valid once the noise is frozen.

Tapes are single-owner; independent tapes may run concurrently but a
single tape must not be shared across threads.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NonScalarRoot, ShapeMismatch

_STATE = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_STATE, "stack", None)
    if stack is None:
        stack = []
        _STATE.stack = stack
    return stack


def _active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Var:
    """A node holding a float64 array value."""

    __slots__ = ("value",)
    _ids = 0

    def __init__(self, value):
        self.value = np.asarray(value, dtype=np.float64)

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        return f"Var(shape={self.value.shape})"

    # arithmetic sugar; constants auto-wrap
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

    def __matmul__(self, other):
        return matmul(self, other)

    def __neg__(self):
        return mul(self, -1.0)

    def sum(self, axis=None):
        return vsum(self, axis=axis)

    def mean(self, axis=None):
        return vmean(self, axis=axis)


class Tape:
    """Execution-ordered record of pullbacks, usable as a context manager."""

    def __init__(self):
        self._entries: list[tuple[Var, tuple[tuple[Var, Callable], ...]]] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        stack = _tape_stack()
        assert stack and stack[-1] is self, "tape stack corrupted"
        stack.pop()

    def record(self, out: Var, pulls: Sequence[tuple[Var, Callable]]) -> None:
        self._entries.append((out, tuple(pulls)))

    def __len__(self) -> int:
        return len(self._entries)


def _as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def record_op(out: Var, pulls: Sequence[tuple[Var, Callable]]) -> Var:
    """Register a custom operation's pullbacks on the active tape.

    Extension hook for ops composed outside this module; each pull maps
    the output gradient to one parent's gradient contribution.
    """
    tape = _active_tape()
    if tape is not None:
        tape.record(out, pulls)
    return out


_record = record_op


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _check_broadcast(a: np.ndarray, b: np.ndarray, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast")


def add(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    _check_broadcast(a.value, b.value, "add")
    out = Var(a.value + b.value)
    return _record(out, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(g, b.value.shape)),
    ])


def sub(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    _check_broadcast(a.value, b.value, "sub")
    out = Var(a.value - b.value)
    return _record(out, [
        (a, lambda g: _unbroadcast(g, a.value.shape)),
        (b, lambda g: _unbroadcast(-g, b.value.shape)),
    ])


def mul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    _check_broadcast(a.value, b.value, "mul")
    out = Var(a.value * b.value)
    return _record(out, [
        (a, lambda g: _unbroadcast(g * b.value, a.value.shape)),
        (b, lambda g: _unbroadcast(g * a.value, b.value.shape)),
    ])


def matmul(a, b) -> Var:
    a, b = _as_var(a), _as_var(b)
    if a.value.ndim != 2 or b.value.ndim != 2:
        raise ShapeMismatch(
            f"matmul expects 2-d operands, got {a.value.shape} and {b.value.shape}")
    if a.value.shape[1] != b.value.shape[0]:
        raise ShapeMismatch(
            f"matmul: inner dimensions differ, {a.value.shape} vs {b.value.shape}")
    out = Var(a.value @ b.value)
    return _record(out, [
        (a, lambda g: g @ b.value.T),
        (b, lambda g: a.value.T @ g),
    ])


def broadcast_to(a, shape) -> Var:
    a = _as_var(a)
    try:
        value = np.broadcast_to(a.value, shape)
    except ValueError:
        raise ShapeMismatch(f"broadcast: {a.value.shape} does not broadcast to {shape}")
    out = Var(value.copy())
    return _record(out, [(a, lambda g: _unbroadcast(g, a.value.shape))])


def concat(parts: Iterable, axis: int = -1) -> Var:
    parts = [_as_var(p) for p in parts]
    if not parts:
        raise ShapeMismatch("concat of zero arrays")
    base = list(parts[0].value.shape)
    ax = axis if axis >= 0 else len(base) + axis
    for p in parts[1:]:
        other = list(p.value.shape)
        if len(other) != len(base) or any(
                i != ax and other[i] != base[i] for i in range(len(base))):
            raise ShapeMismatch(
                f"concat: shapes {parts[0].value.shape} and {p.value.shape} "
                f"incompatible along axis {axis}")
    out = Var(np.concatenate([p.value for p in parts], axis=ax))
    offsets = np.cumsum([p.value.shape[ax] for p in parts])[:-1]

    def make_pull(index):
        def pull(g):
            return np.split(g, offsets, axis=ax)[index]
        return pull

    return _record(out, [(p, make_pull(i)) for i, p in enumerate(parts)])


def vsum(a, axis=None) -> Var:
    a = _as_var(a)
    out = Var(a.value.sum(axis=axis))

    def pull(g):
        if axis is None:
            return np.broadcast_to(g, a.value.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis), a.value.shape).copy()

    return _record(out, [(a, pull)])


def vmean(a, axis=None) -> Var:
    a = _as_var(a)
    out = Var(a.value.mean(axis=axis))
    n = a.value.size if axis is None else a.value.shape[axis]

    def pull(g):
        if axis is None:
            return np.broadcast_to(g / n, a.value.shape).copy()
        return np.broadcast_to(np.expand_dims(g, axis) / n, a.value.shape).copy()

    return _record(out, [(a, pull)])


def tanh(a) -> Var:
    a = _as_var(a)
    t = np.tanh(a.value)
    out = Var(t)
    return _record(out, [(a, lambda g: g * (1.0 - t * t))])


def sigmoid(a) -> Var:
    a = _as_var(a)
    # stable in both tails
    s = np.where(a.value >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(a.value))),
                 np.exp(-np.abs(a.value)) / (1.0 + np.exp(-np.abs(a.value))))
    out = Var(s)
    return _record(out, [(a, lambda g: g * s * (1.0 - s))])


def softplus(a) -> Var:
    a = _as_var(a)
    # log(1 + exp(x)) without overflow or underflow to NaN
    out = Var(np.logaddexp(0.0, a.value))
    s = np.where(a.value >= 0,
                 1.0 / (1.0 + np.exp(-np.abs(a.value))),
                 np.exp(-np.abs(a.value)) / (1.0 + np.exp(-np.abs(a.value))))
    return _record(out, [(a, lambda g: g * s)])


def exp(a) -> Var:
    a = _as_var(a)
    e = np.exp(a.value)
    out = Var(e)
    return _record(out, [(a, lambda g: g * e)])


def log(a) -> Var:
    a = _as_var(a)
    out = Var(np.log(a.value))
    return _record(out, [(a, lambda g: g / a.value)])


def square(a) -> Var:
    a = _as_var(a)
    out = Var(a.value * a.value)
    return _record(out, [(a, lambda g: g * 2.0 * a.value)])


def backward(tape: Tape, root: Var) -> dict[Var, np.ndarray]:
    """Accumulate gradients of ``root`` w.r.t. every node on the tape.

    Nodes unreachable from the root are absent from the map; use
    :func:`grad` to read them as zeros.
    """
    if root.value.size != 1:
        raise NonScalarRoot(f"root must be scalar, got shape {root.value.shape}")
    grads: dict[Var, np.ndarray] = {root: np.ones_like(root.value)}
    for out, pulls in reversed(tape._entries):
        g = grads.get(out)
        if g is None:
            continue
        for parent, pull in pulls:
            contribution = pull(g)
            existing = grads.get(parent)
            if existing is None:
                grads[parent] = contribution
            else:
                grads[parent] = existing + contribution
    return grads


def grad(grads: dict[Var, np.ndarray], var: Var) -> np.ndarray:
    """Gradient of a node, zero when unreachable from the root."""
    g = grads.get(var)
    return np.zeros_like(var.value) if g is None else g


def finite_diff_check(f: Callable[[Var], Var], point: np.ndarray,
                      h: float = 1e-6) -> float:
    """Max relative error between reverse-mode and central differences.

    ``f`` must be deterministic (freeze any noise before calling). The
    relative error uses denominator max(|g|, 1e-8) per component.
    """
    point = np.asarray(point, dtype=np.float64)
    var = Var(point)
    with Tape() as tape:
        out = f(var)
    g = grad(backward(tape, out), var)

    flat = point.ravel()
    fd = np.zeros_like(flat)
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] = flat[i] + h
        hi = float(f(Var(bumped.reshape(point.shape))).value)
        bumped[i] = flat[i] - h
        lo = float(f(Var(bumped.reshape(point.shape))).value)
        fd[i] = (hi - lo) / (2.0 * h)
    fd = fd.reshape(point.shape)

    denom = np.maximum(np.abs(g), 1e-8)
    return float(np.max(np.abs(fd - g) / denom))
