"""Parameterized building blocks shared by the networks.

Weights use zero-mean normal initialization with std sqrt(2 / fan_in);
biases start at zero. Every block exposes ``named_params`` so trainers and
checkpoints can address parameters by stable dotted names.
"""

from __future__ import annotations

import numpy as np

from pshrnet import tensor as tc
from pshrnet.tensor import Tensor


def he_normal(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    return rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)


class Conv2d:
    """3x3/1x1 convolution layer with optional bias."""

    def __init__(self, rng, in_ch: int, out_ch: int, k: int,
                 stride: int = 1, padding: int = 0, bias: bool = True):
        self.stride = stride
        self.padding = padding
        self.w = Tensor(he_normal(rng, (out_ch, in_ch, k, k), in_ch * k * k), requires_grad=True)
        self.b = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = tc.conv2d(x, self.w, self.stride, self.padding)
        if self.b is not None:
            y = tc.add(y, tc.reshape(self.b, (1, self.b.size, 1, 1)))
        return y

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}.w": self.w}
        if self.b is not None:
            out[f"{prefix}.b"] = self.b
        return out


class Linear:
    """Affine map on (batch, features) matrices."""

    def __init__(self, rng, in_features: int, out_features: int, init_scale: float = 1.0):
        self.w = Tensor(init_scale * he_normal(rng, (in_features, out_features), in_features),
                        requires_grad=True)
        self.b = Tensor(np.zeros(out_features), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        return tc.add(tc.matmul(x, self.w), self.b)

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.w": self.w, f"{prefix}.b": self.b}


def collect_params(named: dict[str, Tensor]) -> dict[str, Tensor]:
    """Pass-through helper kept for call-site symmetry."""
    return named


def set_requires_grad(params: dict[str, Tensor], flag: bool):
    for p in params.values():
        p.requires_grad = flag
