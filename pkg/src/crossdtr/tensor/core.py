"""Dense tensors with reverse-mode automatic differentiation on an explicit tape.

Values are stored as row-major numpy arrays, 32-bit by default. A runtime
switch to 64-bit exists so finite-difference gradient checks are meaningful;
everything else runs in float32 for speed.

A ``Tape`` records one forward pass. It is owned by a single logical thread
(the active tape lives in thread-local storage) and is consumable exactly
once: ``backward()`` traverses its nodes in reverse recorded order, which is
a valid topological order because operands always exist before the operation
that consumes them.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import UsageError

_DTYPES = {"float32": np.float32, "float64": np.float64}

_local = threading.local()


def _thread_state():
    if not hasattr(_local, "tapes"):
        _local.tapes = []
        _local.dtype = np.float32
    return _local


def set_default_dtype(name: str) -> None:
    """Set the dtype new tensors are created with ('float32' or 'float64')."""
    if name not in _DTYPES:
        raise UsageError(f"unsupported dtype {name!r}; expected one of {sorted(_DTYPES)}")
    _thread_state().dtype = _DTYPES[name]


def default_dtype() -> np.dtype:
    return np.dtype(_thread_state().dtype)


@contextmanager
def dtype_scope(name: str):
    """Temporarily switch the default dtype (used by the gradient-check suites)."""
    state = _thread_state()
    prev = state.dtype
    set_default_dtype(name)
    try:
        yield
    finally:
        state.dtype = prev


class Node:
    """One recorded operation: parent handles plus a backward closure.

    ``backward_fn(grad_out)`` returns one gradient array (or None) per input.
    """

    __slots__ = ("inputs", "backward_fn", "out", "tape")

    def __init__(self, inputs, backward_fn, out, tape):
        self.inputs = inputs
        self.backward_fn = backward_fn
        self.out = out
        self.tape = tape


class Tape:
    """Ordered record of one forward pass, consumable by ``backward`` once."""

    def __init__(self):
        self.nodes: list[Node] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        _thread_state().tapes.append(self)
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        tapes = _thread_state().tapes
        if not tapes or tapes[-1] is not self:
            raise UsageError("tape exited out of order; tapes must nest")
        tapes.pop()


def active_tape() -> Optional[Tape]:
    tapes = _thread_state().tapes
    return tapes[-1] if tapes else None


class Tensor:
    """A dense n-dimensional value, optionally tracked on a tape.

    ``grad`` accumulates across backward passes until cleared, so two
    forward/backward rounds sum their gradients.
    """

    __slots__ = ("data", "grad", "requires_grad", "node")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        if isinstance(data, Tensor):
            data = data.data
        self.data = np.asarray(data, dtype=dtype if dtype is not None else default_dtype())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = bool(requires_grad)
        self.node: Optional[Node] = None

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
    def dtype(self) -> np.dtype:
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.reshape(()))

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data, requires_grad=False, dtype=self.data.dtype)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype}{flag})"

    # Arithmetic operators are attached by crossdtr.tensor.ops at import time.


def record(out: Tensor, inputs: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Record an operation on the active tape if any input is tracked."""
    tape = active_tape()
    if tape is None:
        return out
    if tape.consumed:
        raise UsageError("cannot record onto a tape that backward() already consumed")
    if not any(t.requires_grad for t in inputs):
        return out
    out.requires_grad = True
    node = Node(tuple(inputs), backward_fn, out, tape)
    tape.nodes.append(node)
    out.node = node
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad ancestor of a scalar loss.

    Gradients sum into existing ``grad`` buffers. The loss's tape is marked
    consumed; a second backward on it raises.
    """
    if loss.size != 1:
        raise UsageError(f"backward() needs a scalar loss, got shape {loss.shape}")
    if loss.node is None:
        raise UsageError("loss is not attached to a tape; run the forward pass inside `with Tape():`")
    tape = loss.node.tape
    if tape.consumed:
        raise UsageError("this tape was already consumed by backward()")
    tape.consumed = True

    pending: dict[int, tuple[Tensor, np.ndarray]] = {
        id(loss): (loss, np.ones_like(loss.data))
    }
    for node in reversed(tape.nodes):
        entry = pending.pop(id(node.out), None)
        if entry is None:
            continue
        out_t, g = entry
        out_t.grad = g if out_t.grad is None else out_t.grad + g
        for inp, gin in zip(node.inputs, node.backward_fn(g)):
            if gin is None or not inp.requires_grad:
                continue
            gin = np.asarray(gin, dtype=inp.data.dtype)
            prev = pending.get(id(inp))
            if prev is None:
                pending[id(inp)] = (inp, gin)
            else:
                pending[id(inp)] = (inp, prev[1] + gin)
    # Whatever is left never appeared as a node output on this tape: leaves.
    for leaf, g in pending.values():
        leaf.grad = g if leaf.grad is None else leaf.grad + g


def zero_grads(tensors) -> None:
    for t in tensors:
        t.grad = None
