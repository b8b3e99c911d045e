"""Dense tensors and the recording tape used for reverse-mode differentiation.

A :class:`Tape` is an ordered log of operations. Ops executed while a tape is
active append a record ``(outputs, inputs, backward_fn)``; :meth:`Tape.backward`
walks the records in exact reverse order, which is a valid topological order
because every record was appended after its inputs were produced.
"""
from __future__ import annotations

import threading
from typing import Callable, Sequence

import numpy as np

from ..errors import ArgumentError, StateError

BackwardFn = Callable[[list], Sequence]

_local = threading.local()


def _tape_stack() -> list:
    stack = getattr(_local, "stack", None)
    if stack is None:
        stack = _local.stack = []
    return stack


def active_tape() -> "Tape | None":
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """A real array with an optional gradient.

    Leaf tensors (parameters, inputs under gradient check) are created by the
    user with ``requires_grad=True`` and accumulate into ``.grad``. Tensors
    produced by ops are interior nodes; their gradients live only inside a
    backward pass.
    """

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "name", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind not in "fc":
            arr = arr.astype(np.float64 if dtype is None else dtype)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{tag}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        from . import ops
        return ops.add(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other) if isinstance(other, Tensor) else ops.add_scalar(self, -other)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other) if isinstance(other, Tensor) else ops.scale(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.scale(self, -1.0)


class _Record:
    __slots__ = ("outputs", "inputs", "backward")

    def __init__(self, outputs, inputs, backward):
        self.outputs = outputs
        self.inputs = inputs
        self.backward = backward


class Tape:
    """Ordered operation log. Use as a context manager around the forward pass."""

    def __init__(self):
        self.records: list[_Record] = []

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, outputs: list[Tensor], inputs: list[Tensor], backward: BackwardFn) -> None:
        self.records.append(_Record(outputs, inputs, backward))

    def backward(self, loss: Tensor) -> None:
        backward(self, loss)


def make_op(outputs, inputs: Sequence[Tensor], backward: BackwardFn):
    """Wrap raw output arrays as tensors and record them if any input is tracked.

    ``outputs`` is a single array or a tuple of arrays. ``backward`` receives a
    list with one gradient array per output and returns one gradient (or None)
    per input.
    """
    single = not isinstance(outputs, tuple)
    arrays = [np.asarray(outputs)] if single else [np.asarray(o) for o in outputs]
    tape = active_tape()
    track = tape is not None and any(t.requires_grad for t in inputs)
    outs = []
    for a in arrays:
        t = Tensor.__new__(Tensor)
        t.data = a
        t.grad = None
        t.requires_grad = track
        t.is_leaf = False
        t.name = None
        outs.append(t)
    if track:
        tape.record(outs, list(inputs), backward)
    return outs[0] if single else tuple(outs)


def backward(tape: Tape, loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``.grad``."""
    if not tape.records:
        raise StateError("backward called before any forward operation was recorded")
    if loss.data.size != 1:
        raise ArgumentError(f"loss must be a scalar, got shape {loss.shape}")
    if not loss.requires_grad:
        raise StateError("loss is not reachable from any recorded operation")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        gouts = [grads.pop(id(o), None) for o in rec.outputs]
        if all(g is None for g in gouts):
            continue
        gouts = [np.zeros_like(o.data) if g is None else g for o, g in zip(rec.outputs, gouts)]
        gins = rec.backward(gouts)
        for inp, g in zip(rec.inputs, gins):
            if g is None or not inp.requires_grad:
                continue
            if inp.is_leaf:
                g = np.asarray(g, dtype=inp.data.dtype).reshape(inp.data.shape)
                inp.grad = g.copy() if inp.grad is None else inp.grad + g
            else:
                key = id(inp)
                prev = grads.get(key)
                grads[key] = g if prev is None else prev + g
