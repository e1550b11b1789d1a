"""
Named parameter sets and the forward-closure container shared by both networks.
A network is its parameters (plus non-trainable buffers) and a forward function
that looks them up by name at call time, so loading a checkpoint is a data swap.
"""
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from src.gradtensor import Tensor
from src.utils.errors import FormatError


class ParamBuilder:
    """Creates seeded, named parameters.

    init="normal" draws N(0, 0.02) weights (the GAN recipe); init="he" draws
    N(0, 2/fan_in) for ReLU stacks trained from scratch.
    """

    def __init__(self, rng: np.random.Generator, init: str = "normal", std: float = 0.02):
        self.rng = rng
        self.init = init
        self.std = std
        self.params: dict[str, Tensor] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def _weight(self, name: str, shape: tuple[int, ...], fan_in: int) -> None:
        std = np.sqrt(2.0 / fan_in) if self.init == "he" else self.std
        data = self.rng.normal(0.0, std, size=shape).astype(np.float32)
        self.params[name] = Tensor(data, requires_grad=True, name=name)

    def _zeros(self, name: str, size: int) -> None:
        self.params[name] = Tensor(np.zeros(size, dtype=np.float32), requires_grad=True, name=name)

    def conv(self, name: str, out_ch: int, in_ch: int, k: int, bias: bool = True) -> None:
        self._weight(f"{name}.weight", (out_ch, in_ch, k, k), in_ch * k * k)
        if bias:
            self._zeros(f"{name}.bias", out_ch)

    def conv_transpose(self, name: str, in_ch: int, out_ch: int, k: int, bias: bool = True) -> None:
        self._weight(f"{name}.weight", (in_ch, out_ch, k, k), in_ch * k * k)
        if bias:
            self._zeros(f"{name}.bias", out_ch)

    def depthwise(self, name: str, ch: int, k: int) -> None:
        self._weight(f"{name}.weight", (ch, 1, k, k), k * k)

    def norm(self, name: str, ch: int, running: bool = False) -> None:
        gamma = np.ones(ch, dtype=np.float32)
        if self.init == "normal":
            gamma = (gamma + self.rng.normal(0.0, self.std, size=ch)).astype(np.float32)
        self.params[f"{name}.gamma"] = Tensor(gamma, requires_grad=True, name=f"{name}.gamma")
        self._zeros(f"{name}.beta", ch)
        if running:
            self.buffers[f"{name}.running_mean"] = np.zeros(ch, dtype=np.float32)
            self.buffers[f"{name}.running_var"] = np.ones(ch, dtype=np.float32)


@dataclass
class Network:
    params: dict[str, Tensor]
    forward: Callable[..., Tensor]
    buffers: dict[str, np.ndarray] = field(default_factory=dict)

    def __call__(self, x: Tensor, training: bool = False, rng: np.random.Generator | None = None,
                 taps: dict | None = None) -> Tensor:
        return self.forward(x, training=training, rng=rng, taps=taps)

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self.params.items()}

    def buffer_state(self) -> dict[str, np.ndarray]:
        return {name: b.copy() for name, b in self.buffers.items()}

    def load_state(self, arrays: dict[str, np.ndarray], buffers: dict[str, np.ndarray] | None = None) -> None:
        """Replace parameter (and buffer) values; names and shapes must match exactly."""
        _check_names("parameter", self.params.keys(), arrays.keys())
        for name, p in self.params.items():
            if arrays[name].shape != p.shape:
                raise FormatError(f"parameter '{name}' has shape {arrays[name].shape}, expected {p.shape}")
            p.data = np.array(arrays[name], dtype=np.float32)
        if buffers is not None:
            _check_names("buffer", self.buffers.keys(), buffers.keys())
            for name in self.buffers:
                self.buffers[name] = np.array(buffers[name], dtype=np.float32)


def _check_names(kind: str, expected, found) -> None:
    missing = sorted(set(expected) - set(found))
    extra = sorted(set(found) - set(expected))
    if missing or extra:
        raise FormatError(f"{kind} names differ; missing={missing[:5]} unexpected={extra[:5]}")


def plain_float(value) -> float | None:
    """YAML-friendly float for checkpoint metadata; NaN and missing become None."""
    if value is None or not np.isfinite(value):
        return None
    return float(value)
