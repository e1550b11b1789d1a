"""Activations, normalization, resampling and dropout."""
import numpy as np

from src.gradtensor import ops
from src.gradtensor.tensor import Tensor, as_tensor, make_result
from src.utils.errors import ContractError, DimensionError


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_result("relu", (x,), np.where(mask, x.data, 0), lambda g: (g * mask,))


def leaky_relu(x: Tensor, alpha: float = 0.2) -> Tensor:
    mask = x.data > 0
    slope = np.where(mask, 1.0, alpha).astype(x.dtype)
    return make_result("leaky_relu", (x,), x.data * slope, lambda g: (g * slope,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_result("tanh", (x,), y, lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = _stable_sigmoid(x.data)
    return make_result("sigmoid", (x,), y, lambda g: (g * y * (1 - y),))


def _stable_sigmoid(z: np.ndarray) -> np.ndarray:
    e = np.exp(-np.abs(z))
    return np.where(z >= 0, 1 / (1 + e), e / (1 + e)).astype(z.dtype)


NORM_AXES = {"batch": (0, 2, 3), "instance": (2, 3)}


def norm_layer(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    mode: str = "batch",
    epsilon: float = 1e-5,
    stats: tuple[np.ndarray, np.ndarray] | None = None,
) -> Tensor:
    """Batch or instance normalization with a per-channel affine.

    Variance is the biased (population) estimate. With `stats=(mean, var)` the
    layer normalizes with those fixed per-channel values instead (inference).
    """
    if mode not in NORM_AXES:
        raise ContractError(f"unknown normalization mode '{mode}'")
    if x.ndim != 4:
        raise DimensionError(f"input must be NCHW, got rank {x.ndim}", axis="rank")
    c = x.shape[1]
    if gamma.shape != (c,) or beta.shape != (c,):
        raise DimensionError(f"gamma/beta {gamma.shape}/{beta.shape} do not match {c} channels", axis="channel")

    g4 = gamma.data[None, :, None, None]
    b4 = beta.data[None, :, None, None]
    if stats is not None:
        mean = np.asarray(stats[0], dtype=x.dtype)[None, :, None, None]
        var = np.asarray(stats[1], dtype=x.dtype)[None, :, None, None]
        inv_std = 1 / np.sqrt(var + epsilon)
        xhat = (x.data - mean) * inv_std

        def _fixed_backward(g):
            return g * g4 * inv_std, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

        return make_result("norm_layer", (x, gamma, beta), g4 * xhat + b4, _fixed_backward)

    axes = NORM_AXES[mode]
    m = int(np.prod([x.shape[a] for a in axes]))
    mean = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv_std = 1 / np.sqrt(var + epsilon)
    xhat = (x.data - mean) * inv_std

    def _backward(g):
        dxhat = g * g4
        gx = inv_std / m * (
            m * dxhat
            - dxhat.sum(axis=axes, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True)
        )
        return gx, (g * xhat).sum(axis=(0, 2, 3)), g.sum(axis=(0, 2, 3))

    return make_result("norm_layer", (x, gamma, beta), g4 * xhat + b4, _backward)


def interpolation_matrix(in_size: int, out_size: int) -> np.ndarray:
    """Row-stochastic (out_size, in_size) bilinear weights, half-pixel centers.

    Output sample d reads source coordinate s = (d + 0.5) * in_size / out_size - 0.5,
    clamped to [0, in_size - 1], and blends floor(s) and floor(s) + 1 linearly.
    Equal sizes give the identity.
    """
    if in_size < 1 or out_size < 1:
        raise DimensionError(f"sizes must be positive, got {in_size} -> {out_size}", axis="spatial")
    src = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    src = np.clip(src, 0, in_size - 1)
    lo = np.floor(src).astype(np.int64)
    hi = np.minimum(lo + 1, in_size - 1)
    frac = src - lo
    weights = np.zeros((out_size, in_size), dtype=np.float64)
    rows = np.arange(out_size)
    np.add.at(weights, (rows, lo), 1 - frac)
    np.add.at(weights, (rows, hi), frac)
    return weights


def resize_bilinear(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Bilinear resampling of the two spatial axes (half-pixel convention)."""
    if x.ndim != 4:
        raise DimensionError(f"input must be NCHW, got rank {x.ndim}", axis="rank")
    mh = interpolation_matrix(x.shape[2], out_h).astype(x.dtype)
    mw = interpolation_matrix(x.shape[3], out_w).astype(x.dtype)
    out = mh @ x.data @ mw.T

    def _backward(g):
        return (mh.T @ g @ mw,)

    return make_result("resize_bilinear", (x,), out, _backward)


def bilinear_upsample(x: Tensor, factor: int) -> Tensor:
    if factor < 1:
        raise ContractError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return x
    return resize_bilinear(x, x.shape[2] * factor, x.shape[3] * factor)


def global_avg_pool(x: Tensor) -> Tensor:
    return ops.mean(x, axis=(2, 3), keepdims=True)


def dropout(x: Tensor, rate: float, rng: np.random.Generator | None, training: bool) -> Tensor:
    """Inverted dropout; identity outside training."""
    if not training or rate <= 0:
        return x
    if rng is None:
        raise ContractError("dropout in training mode needs a seeded generator")
    keep = (rng.random(x.shape) >= rate).astype(x.dtype) / (1 - rate)
    return ops.mul(x, as_tensor(keep, like=x))
