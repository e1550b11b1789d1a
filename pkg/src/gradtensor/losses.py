"""Scalar losses with mean reduction."""
import numpy as np

from src.gradtensor.tensor import Tensor, as_tensor, make_result
from src.utils.errors import DimensionError, LabelError


def _same_shape(a: Tensor, b: Tensor, what: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{what}: shapes {a.shape} and {b.shape} differ", axis="shape")


def l1_loss(a: Tensor, b) -> Tensor:
    """mean |a - b|; the subgradient at a == b is 0."""
    b = as_tensor(b, like=a)
    _same_shape(a, b, "l1_loss")
    diff = a.data - b.data
    n = diff.size

    def _backward(g):
        s = np.sign(diff) * (g / n)
        return s, -s

    return make_result("l1_loss", (a, b), np.abs(diff).mean(), _backward)


def bce_with_logits(logits: Tensor, targets) -> Tensor:
    """mean(max(x, 0) - x*t + log(1 + exp(-|x|)))."""
    targets = as_tensor(targets, like=logits)
    if targets.size == 1 and logits.size != 1:
        targets = as_tensor(np.full(logits.shape, targets.item(), dtype=logits.dtype))
    _same_shape(logits, targets, "bce_with_logits")
    x, t = logits.data, targets.data
    n = x.size
    loss = (np.maximum(x, 0) - x * t + np.log1p(np.exp(-np.abs(x)))).mean()
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1 / (1 + e), e / (1 + e))

    def _backward(g):
        return (sig - t) * (g / n), None

    return make_result("bce_with_logits", (logits, targets), loss, _backward)


def softmax_cross_entropy(logits: Tensor, labels: np.ndarray, ignore_index: int = 255) -> Tensor:
    """Per-pixel cross-entropy over the class axis of N x C x H x W logits.

    `labels` is N x H x W (or H x W for a single image) of class indices;
    pixels equal to `ignore_index` do not contribute. The mean runs over
    contributing pixels; with none the loss is 0.
    """
    labels = np.asarray(labels)
    if labels.ndim == 2:
        labels = labels[None]
    if logits.ndim != 4:
        raise DimensionError(f"logits must be NCHW, got rank {logits.ndim}", axis="rank")
    n, c, h, w = logits.shape
    if labels.shape != (n, h, w):
        raise DimensionError(f"labels {labels.shape} do not match logits {(n, h, w)}", axis="spatial")
    labels = labels.astype(np.int64)
    valid = labels != ignore_index
    bad = valid & ((labels < 0) | (labels >= c))
    if bad.any():
        coord = tuple(int(v) for v in np.argwhere(bad)[0])
        raise LabelError(f"label {labels[coord]} outside 0..{c - 1}", coordinate=coord)

    z = logits.data
    shifted = z - z.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    total = exp.sum(axis=1, keepdims=True)
    log_probs = shifted - np.log(total)
    safe = np.where(valid, labels, 0)
    picked = np.take_along_axis(log_probs, safe[:, None], axis=1)[:, 0]
    count = int(valid.sum())
    loss = -(picked * valid).sum() / count if count else np.zeros((), dtype=z.dtype)

    def _backward(g):
        if count == 0:
            return (np.zeros_like(z),)
        grad = exp / total
        np.put_along_axis(grad, safe[:, None], np.take_along_axis(grad, safe[:, None], axis=1) - 1, axis=1)
        grad *= valid[:, None] * (g / count)
        return (grad,)

    return make_result("softmax_cross_entropy", (logits,), loss, _backward)
