"""Tensor value type and the reverse-mode tape.

A :class:`Tensor` is an immutable wrapper around a contiguous numpy array.
Differentiable ops append a node to the tape active on the current thread
(if any of their inputs is tracked by it); :meth:`Tape.backward` walks the
nodes in reverse recording order, which is a valid reverse topological order
because a node's inputs always exist before the node itself.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from contextlib import contextmanager
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

_local = threading.local()


def _as_float_array(data, dtype=None) -> np.ndarray:
    if dtype is None:
        if isinstance(data, np.ndarray) and data.dtype in (np.float32, np.float64):
            dtype = data.dtype
        else:
            dtype = np.float32
    return np.ascontiguousarray(data, dtype=dtype)


class Tensor:
    """Dense float array, NCHW by convention for image-like values."""

    __slots__ = ("data", "requires_grad", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        self.data = _as_float_array(data, dtype)
        self.data.flags.writeable = False
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def astype(self, dtype) -> "Tensor":
        return Tensor(self.data.astype(dtype), requires_grad=self.requires_grad, name=self.name)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, dtype={self.dtype})"

    # Operator sugar; the implementations live in ops.
    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)


@dataclass
class Node:
    op: str
    out: int
    inputs: tuple[int | None, ...]
    backward: Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tape:
    """Append-only record of differentiable ops, confined to one thread.

    Use as a context manager; ops executed inside the block on this thread
    are recorded when at least one input is tracked. A tape is consumed by a
    single :meth:`backward` call.
    """

    def __init__(self) -> None:
        self.nodes: list[Node] = []
        self._handles: dict[int, int] = {}
        self._tensors: list[Tensor] = []
        self._leaves: list[int] = []
        self._consumed = False
        self._thread = threading.get_ident()

    def __enter__(self) -> "Tape":
        stack = getattr(_local, "tapes", None)
        if stack is None:
            stack = _local.tapes = []
        stack.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _local.tapes.pop()

    def _register(self, t: Tensor) -> int:
        h = len(self._tensors)
        self._handles[id(t)] = h
        self._tensors.append(t)
        return h

    def watch(self, t: Tensor) -> int:
        """Track ``t`` as a leaf and return its handle."""
        h = self._handles.get(id(t))
        if h is None:
            h = self._register(t)
            self._leaves.append(h)
        return h

    def handle(self, t: Tensor) -> int | None:
        h = self._handles.get(id(t))
        if h is None and t.requires_grad:
            h = self.watch(t)
        return h

    def record(self, op: str, out: Tensor, inputs: Sequence[Tensor | None], backward) -> None:
        handles = tuple(None if t is None else self.handle(t) for t in inputs)
        if all(h is None for h in handles):
            return
        self.nodes.append(Node(op, self._register(out), handles, backward))

    def backward(self, loss: Tensor) -> dict[int, np.ndarray]:
        """Propagate d(loss)/d(.) to every tracked tensor.

        Returns a map handle -> gradient for every leaf; leaves the loss does
        not depend on get zeros.
        """
        if loss.size != 1:
            raise ValueError(f"backward needs a scalar loss, got shape {loss.shape}")
        if self._consumed:
            raise RuntimeError("tape already consumed by a previous backward")
        self._consumed = True
        grads: dict[int, np.ndarray] = {}
        root = self._handles.get(id(loss))
        if root is not None:
            grads[root] = np.ones(loss.shape, dtype=loss.dtype)
        for node in reversed(self.nodes):
            g = grads.pop(node.out, None)
            if g is None:
                continue
            in_grads = node.backward(g)
            for h, gi in zip(node.inputs, in_grads):
                if h is None or gi is None:
                    continue
                ref = self._tensors[h]
                if gi.shape != ref.shape:
                    raise AssertionError(f"{node.op}: gradient shape {gi.shape} != input shape {ref.shape}")
                if h in grads:
                    grads[h] = grads[h] + gi
                else:
                    grads[h] = gi.astype(ref.dtype, copy=False)
        out = {}
        for h in self._leaves:
            t = self._tensors[h]
            out[h] = grads.get(h, np.zeros(t.shape, dtype=t.dtype))
        self._grads = out
        return out

    def grad(self, t: Tensor) -> np.ndarray:
        """Gradient of the last backward w.r.t. leaf ``t``."""
        h = self._handles.get(id(t))
        if h is None:
            return np.zeros(t.shape, dtype=t.dtype)
        return self._grads[h]


def active_tape() -> Tape | None:
    stack = getattr(_local, "tapes", None)
    return stack[-1] if stack else None


def backward(tape: Tape, loss: Tensor) -> dict[int, np.ndarray]:
    return tape.backward(loss)


def make_output(op: str, data: np.ndarray, inputs: Sequence[Tensor | None], backward_fn) -> Tensor:
    """Wrap ``data`` as an op result and record it on the active tape."""
    out = Tensor(data)
    tape = active_tape()
    if tape is not None:
        tape.record(op, out, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# FLOP accounting. Ops report their cost here while a counter is active.

@dataclass
class FlopCounter:
    entries: list[tuple[str, str, float]] = field(default_factory=list)

    def add(self, kind: str, flops: float) -> None:
        scope = "/".join(getattr(_local, "scopes", ())) or "<root>"
        self.entries.append((scope, kind, float(flops)))

    @property
    def total(self) -> float:
        return sum(e[2] for e in self.entries)

    def by_scope(self) -> dict[str, float]:
        acc: dict[str, float] = defaultdict(float)
        for scope, _, f in self.entries:
            acc[scope] += f
        return dict(acc)

    def by_kind(self) -> dict[str, float]:
        acc: dict[str, float] = defaultdict(float)
        for _, kind, f in self.entries:
            acc[kind] += f
        return dict(acc)


@contextmanager
def count_flops() -> Iterator[FlopCounter]:
    prev = getattr(_local, "counter", None)
    counter = FlopCounter()
    _local.counter = counter
    try:
        yield counter
    finally:
        _local.counter = prev


@contextmanager
def scope(name: str) -> Iterator[None]:
    """Name the layer that subsequently executed ops are attributed to."""
    scopes = getattr(_local, "scopes", None)
    if scopes is None:
        scopes = _local.scopes = []
    scopes.append(name)
    try:
        yield
    finally:
        scopes.pop()


def add_flops(kind: str, flops: float) -> None:
    counter = getattr(_local, "counter", None)
    if counter is not None:
        counter.add(kind, flops)
