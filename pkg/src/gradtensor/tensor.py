"""
Tensor and define-by-run tape.

Layout is NCHW row-major. Storage is float32; float64 tensors are accepted so that
finite-difference checks can run in double precision. A tape is rebuilt for every
forward pass and is confined to the thread that entered it.
"""
import itertools
import threading
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from src.utils.errors import ContractError, DimensionError

_node_ids = itertools.count(1)
_local = threading.local()

BackwardFn = Callable[[np.ndarray], Sequence[np.ndarray | None]]


class Tensor:
    """An n-dimensional array with an optional gradient accumulator."""

    __slots__ = ("data", "grad", "requires_grad", "is_leaf", "node_id", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None, dtype=np.float32):
        self.data = np.array(data, dtype=dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.is_leaf = True
        self.node_id = next(_node_ids)
        self.name = name

    @classmethod
    def _wrap(cls, data: np.ndarray) -> "Tensor":
        out = cls.__new__(cls)
        out.data = data
        out.grad = None
        out.requires_grad = False
        out.is_leaf = True
        out.node_id = next(_node_ids)
        out.name = None
        return out

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
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data.copy()

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def zero_grad(self) -> None:
        self.grad = None

    def grad_or_zeros(self) -> np.ndarray:
        """The accumulated gradient, or zeros when backward never reached this tensor."""
        return self.grad if self.grad is not None else np.zeros_like(self.data)

    def detach(self) -> "Tensor":
        """Same values, cut from the tape."""
        return Tensor._wrap(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}{label}, requires_grad={self.requires_grad})"

    # Operator sugar; the differentiable rules live in ops.py
    def __add__(self, other):
        from src.gradtensor import ops
        return ops.add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from src.gradtensor import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from src.gradtensor import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from src.gradtensor import ops
        return ops.mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        from src.gradtensor import ops
        return ops.div(self, other)

    def __neg__(self):
        from src.gradtensor import ops
        return ops.neg(self)


@dataclass
class TapeRecord:
    op: str
    inputs: tuple[Tensor, ...]
    output: Tensor
    backward: BackwardFn


class Tape:
    """Ordered record of operations; inputs of every record precede it."""

    def __init__(self):
        self.records: list[TapeRecord] = []
        self._outputs: set[int] = set()

    def record(self, record: TapeRecord) -> None:
        self.records.append(record)
        self._outputs.add(record.output.node_id)

    def produced(self, tensor: Tensor) -> bool:
        return tensor.node_id in self._outputs

    def __len__(self) -> int:
        return len(self.records)

    def __enter__(self) -> "Tape":
        _stack().append(self)
        return self

    def __exit__(self, *exc) -> None:
        _stack().pop()


class no_record:
    """Context manager that pauses recording on the current thread."""

    def __enter__(self):
        _stack().append(None)
        return self

    def __exit__(self, *exc):
        _stack().pop()


def _stack() -> list:
    if not hasattr(_local, "stack"):
        _local.stack = []
    return _local.stack


def current_tape() -> Tape | None:
    stack = _stack()
    return stack[-1] if stack else None


def as_tensor(value, like: Tensor | None = None) -> Tensor:
    if isinstance(value, Tensor):
        return value
    dtype = like.dtype if like is not None else np.float32
    return Tensor._wrap(np.asarray(value, dtype=dtype))


def make_result(op: str, inputs: Sequence[Tensor], data: np.ndarray, backward: BackwardFn) -> Tensor:
    """Wrap an op's output and record it when a tape is active and an input needs gradients."""
    dtype = np.result_type(*(t.data.dtype for t in inputs))
    out = Tensor._wrap(np.ascontiguousarray(data, dtype=dtype))
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out.is_leaf = False
        tape.record(TapeRecord(op, tuple(inputs), out, backward))
    return out


def backward(loss: Tensor, tape: Tape) -> None:
    """Populate `.grad` on every leaf tensor reachable from `loss`.

    Leaf gradients accumulate across calls; clear them with `zero_grad` between steps.
    """
    if loss.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not tape.produced(loss):
        if loss.is_leaf and loss.requires_grad:
            _accumulate(loss, np.ones_like(loss.data))
            return
        raise ContractError("loss was not recorded on this tape")

    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for rec in reversed(tape.records):
        g = grads.pop(rec.output.node_id, None)
        if g is None:
            continue
        input_grads = rec.backward(g)
        for tensor, gi in zip(rec.inputs, input_grads):
            if gi is None or not tensor.requires_grad:
                continue
            if gi.shape != tensor.shape:
                raise DimensionError(
                    f"backward rule of '{rec.op}' returned gradient {gi.shape} for input {tensor.shape}",
                    axis="gradient",
                )
            gi = gi.astype(tensor.dtype, copy=False)
            if tensor.is_leaf:
                _accumulate(tensor, gi)
            elif tensor.node_id in grads:
                grads[tensor.node_id] = grads[tensor.node_id] + gi
            else:
                grads[tensor.node_id] = gi


def _accumulate(tensor: Tensor, g: np.ndarray) -> None:
    tensor.grad = g.copy() if tensor.grad is None else tensor.grad + g
