"""Elementwise, reduction and shape operations with backward rules."""
from typing import Sequence

import numpy as np

from src.gradtensor.tensor import Tensor, as_tensor, make_result
from src.utils.errors import DimensionError


def unbroadcast(grad: np.ndarray, to_shape: tuple[int, ...]) -> np.ndarray:
    """Sum out broadcast dimensions so `grad` matches `to_shape`."""
    if grad.shape == to_shape:
        return grad
    while grad.ndim > len(to_shape):
        grad = grad.sum(axis=0)
    for dim, size in enumerate(to_shape):
        if size == 1 and grad.shape[dim] != 1:
            grad = grad.sum(axis=dim, keepdims=True)
    return grad


def _pair(a, b) -> tuple[Tensor, Tensor]:
    if isinstance(a, Tensor):
        return a, as_tensor(b, like=a)
    b = as_tensor(b)
    return as_tensor(a, like=b), b


def add(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(g, b.shape)

    return make_result("add", (a, b), a.data + b.data, _backward)


def sub(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return unbroadcast(g, a.shape), unbroadcast(-g, b.shape)

    return make_result("sub", (a, b), a.data - b.data, _backward)


def mul(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return unbroadcast(g * b.data, a.shape), unbroadcast(g * a.data, b.shape)

    return make_result("mul", (a, b), a.data * b.data, _backward)


def div(a, b) -> Tensor:
    a, b = _pair(a, b)

    def _backward(g):
        return (
            unbroadcast(g / b.data, a.shape),
            unbroadcast(-g * a.data / (b.data * b.data), b.shape),
        )

    return make_result("div", (a, b), a.data / b.data, _backward)


def neg(x: Tensor) -> Tensor:
    return make_result("neg", (x,), -x.data, lambda g: (-g,))


def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make_result("sum", (x,), x.data.sum(axis=axis, keepdims=keepdims), _backward)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))

    def _backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / count, x.shape).copy(),)

    return make_result("mean", (x,), x.data.mean(axis=axis, keepdims=keepdims), _backward)


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    return make_result("reshape", (x,), x.data.reshape(shape), lambda g: (g.reshape(x.shape),))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        data = np.broadcast_to(x.data, shape)
    except ValueError as exc:
        raise DimensionError(f"cannot broadcast {x.shape} to {shape}", axis="broadcast") from exc
    return make_result("broadcast_to", (x,), data, lambda g: (unbroadcast(g, x.shape),))


def concat(tensors: Sequence[Tensor], axis: int = 1) -> Tensor:
    """Concatenate along `axis`; every other axis must agree."""
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref):
            raise DimensionError(f"concat rank {t.ndim} != {len(ref)}", axis="rank")
        for dim, (p, q) in enumerate(zip(ref, t.shape)):
            if dim != axis % len(ref) and p != q:
                raise DimensionError(f"concat size {q} != {p}", axis=dim)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_result("concat", tensors, np.concatenate([t.data for t in tensors], axis=axis), _backward)
