"""Finite-difference verification of backward rules, in double precision."""
from typing import Callable, Sequence

import numpy as np

from src.gradtensor.tensor import Tape, Tensor, backward, no_record
from src.utils.errors import ContractError


def grad_check(
    fn: Callable[..., Tensor],
    inputs: Sequence,
    epsilon: float = 1e-4,
    max_checks: int | None = None,
    seed: int = 0,
) -> float:
    """Max relative error between analytic and central-difference gradients.

    Each input is promoted to a float64 leaf. The error of one input is
    max|analytic - numeric| / max(max|analytic|, max|numeric|); the result is the
    worst over inputs (0 when both gradients vanish). With `max_checks` only a
    seeded random subset of elements per input is perturbed.
    """
    tensors = [
        Tensor(np.asarray(x.data if isinstance(x, Tensor) else x, dtype=np.float64),
               requires_grad=True, dtype=np.float64)
        for x in inputs
    ]
    with Tape() as tape:
        out = fn(*tensors)
    if out.size != 1:
        raise ContractError(f"grad_check needs a scalar closure, got shape {out.shape}")
    backward(out, tape)

    rng = np.random.default_rng(seed)
    worst = 0.0
    for t in tensors:
        analytic = t.grad_or_zeros()
        flat = t.data.reshape(-1)
        indices = np.arange(flat.size)
        if max_checks is not None and flat.size > max_checks:
            indices = np.sort(rng.choice(flat.size, size=max_checks, replace=False))
        numeric = np.zeros(len(indices))
        with no_record():
            for k, idx in enumerate(indices):
                orig = flat[idx]
                flat[idx] = orig + epsilon
                f_plus = fn(*tensors).item()
                flat[idx] = orig - epsilon
                f_minus = fn(*tensors).item()
                flat[idx] = orig
                numeric[k] = (f_plus - f_minus) / (2 * epsilon)
        a = analytic.reshape(-1)[indices]
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0))
        if scale == 0:
            continue
        worst = max(worst, float(np.abs(a - numeric).max() / scale))
    return worst
