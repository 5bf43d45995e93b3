"""Dense tensors and the reverse-mode tape.

A :class:`Tensor` wraps a numpy array. Operations in :mod:`.ops` record
themselves on the innermost active :class:`Tape` whenever one of their
inputs requires a gradient; outside any tape nothing is recorded, which is
how inference and benchmark runs avoid the bookkeeping.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericalError

BackwardFn = Callable[[np.ndarray], Sequence[Optional[np.ndarray]]]

_local = threading.local()


def _tape_stack() -> list["Tape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def active_tape() -> Optional["Tape"]:
    stack = _tape_stack()
    return stack[-1] if stack else None


class Tensor:
    """n-dimensional real array with optional gradient tracking."""

    __slots__ = ("data", "requires_grad", "grad", "name", "_recorded")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if dtype is None and arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data: np.ndarray = arr
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.name = name
        self._recorded = False

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
    def is_leaf(self) -> bool:
        return not self._recorded

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data.reshape(-1)[0]) if self.data.size == 1 else float("nan")

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data, dtype=self.data.dtype)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Arithmetic sugar; the real work lives in ops.
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

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __neg__(self):
        from . import ops
        return ops.mul(self, -1.0)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)

    def reshape(self, *shape):
        from . import ops
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return ops.reshape(self, shape)

    def transpose(self, *axes):
        from . import ops
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return ops.transpose(self, axes)

    def sum(self, axis=None, keepdims: bool = False):
        from . import ops
        return ops.sum_reduce(self, axis=axis, keepdims=keepdims)


def as_tensor(x, dtype=None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype) if dtype is not None else x)


@dataclass
class _Record:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered log of differentiable operations.

    Use as a context manager; every op executed inside the ``with`` block
    whose inputs require gradients is appended to :attr:`records`.
    :meth:`backward` replays them in reverse order and accumulates into the
    ``grad`` field of every reachable leaf.
    """

    def __init__(self) -> None:
        self.records: list[_Record] = []
        self._thread = threading.get_ident()

    def __enter__(self) -> "Tape":
        _tape_stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        stack = _tape_stack()
        if stack and stack[-1] is self:
            stack.pop()

    def __len__(self) -> int:
        return len(self.records)

    def record(self, op: str, inputs: Sequence[Tensor], output: Tensor, backward: BackwardFn) -> None:
        if threading.get_ident() != self._thread:
            raise RuntimeError("a Tape may only be used from the thread that created it")
        self.records.append(_Record(op, tuple(inputs), output, backward))
        output._recorded = True

    def backward(self, loss: Tensor, grad: np.ndarray | None = None, retain: bool = False) -> None:
        if grad is None:
            if loss.data.size != 1:
                raise ValueError("backward() without an explicit grad needs a scalar loss")
            grad = np.ones_like(loss.data)
        grads: dict[int, np.ndarray] = {id(loss): np.asarray(grad, dtype=loss.dtype)}
        leaves: dict[int, Tensor] = {}
        if loss.is_leaf and loss.requires_grad:
            leaves[id(loss)] = loss
        for rec in reversed(self.records):
            g = grads.pop(id(rec.output), None)
            if g is None:
                continue
            in_grads = rec.backward(g)
            for t, gi in zip(rec.inputs, in_grads):
                if gi is None or not t.requires_grad:
                    continue
                if gi.shape != t.shape:
                    raise AssertionError(f"{rec.op}: grad shape {gi.shape} != input shape {t.shape}")
                if gi.dtype != t.dtype:
                    gi = gi.astype(t.dtype)
                key = id(t)
                prev = grads.get(key)
                grads[key] = gi if prev is None else prev + gi
                if t.is_leaf:
                    leaves[key] = t
        for key, leaf in leaves.items():
            g = grads.get(key)
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise NumericalError(f"non-finite gradient reached leaf {leaf.name or leaf.shape}")
            leaf.grad = g.copy() if leaf.grad is None else leaf.grad + g
        if not retain:
            self.records.clear()


def record(op: str, inputs: Sequence[Tensor], out_data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap ``out_data`` in a Tensor and log it on the active tape if needed."""
    tape = active_tape()
    needs = tape is not None and any(t.requires_grad for t in inputs)
    out = Tensor(out_data, requires_grad=needs, dtype=out_data.dtype)
    if needs:
        tape.record(op, inputs, out, backward)
    return out
