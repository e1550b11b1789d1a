"""Adam with bias correction."""
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from src.gradtensor.tensor import Tensor
from src.utils.errors import DimensionError


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Mapping[str, Tensor],
    grads: Mapping[str, np.ndarray] | None,
    state: AdamState,
    lr: float,
) -> None:
    """One Adam update of every parameter, in place; `grads=None` reads `param.grad`.

    Missing gradients count as zero. The step counter increases by exactly one.
    """
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1 ** t
    bc2 = 1.0 - b2 ** t

    for name, param in params.items():
        g = param.grad_or_zeros() if grads is None else grads.get(name)
        if g is None:
            g = np.zeros_like(param.data)
        if g.shape != param.shape:
            raise DimensionError(f"gradient {g.shape} does not match parameter '{name}' {param.shape}", axis=name)
        g = g.astype(param.dtype, copy=False)
        if name not in state.m:
            state.m[name] = np.zeros_like(param.data)
            state.v[name] = np.zeros_like(param.data)
        elif state.m[name].shape != param.shape:
            raise DimensionError(f"moment shape {state.m[name].shape} does not match '{name}'", axis=name)

        m = b1 * state.m[name] + (1.0 - b1) * g
        v = b2 * state.v[name] + (1.0 - b2) * (g * g)
        state.m[name] = m.astype(param.dtype, copy=False)
        state.v[name] = v.astype(param.dtype, copy=False)
        m_hat = state.m[name] / bc1
        v_hat = state.v[name] / bc2
        update = lr * m_hat / (np.sqrt(v_hat) + state.epsilon)
        param.data = (param.data - update).astype(param.dtype, copy=False)


class Adam:
    """Optimizer bound to a named parameter set."""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 0.001,
                 beta1: float = 0.9, beta2: float = 0.999, epsilon: float = 1e-8):
        self.params = params
        self.lr = lr
        self.state = AdamState(beta1=beta1, beta2=beta2, epsilon=epsilon)

    def step(self) -> None:
        adam_step(self.params, None, self.state, self.lr)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()
