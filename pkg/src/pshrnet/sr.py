"""Super-resolution module: deep residual CNN with channel attention.

The net maps an already-upscaled low-resolution image to a restored image
of the same size. A channel-attention gate sits after every conv+relu pair
except the final reconstruction conv, and a global residual connection adds
the input back onto the predicted correction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pshrnet import tensor as tc
from pshrnet.layers import Conv2d, he_normal
from pshrnet.tensor import ContractError, ShapeError, Tensor


@dataclass
class SrConfig:
    depth: int = 8          # total conv layers
    width: int = 32         # feature channels
    reduction: int = 4      # channel-attention bottleneck ratio
    upsample: str = "bilinear"  # pre-net interpolation of the LR input

    def __post_init__(self):
        if self.depth < 2:
            raise ContractError(f"sr depth must be >= 2, got {self.depth}")
        if self.width % self.reduction != 0:
            raise ContractError(
                f"sr width {self.width} must be divisible by reduction {self.reduction}")
        if self.upsample not in ("bilinear", "nearest"):
            raise ContractError(f"unknown upsample mode {self.upsample!r}")


class ChannelAttention:
    """Per-channel sigmoid gate driven by global-average channel statistics.

    z_c is the spatial mean of channel c; the gate is
    sigmoid(relu(z @ W_down) @ W_up), broadcast over H and W.
    """

    def __init__(self, rng, channels: int, reduction: int):
        if channels % reduction != 0:
            raise ContractError(f"channels {channels} not divisible by reduction {reduction}")
        self.channels = channels
        hidden = channels // reduction
        self.w_down = Tensor(he_normal(rng, (channels, hidden), channels), requires_grad=True)
        self.w_up = Tensor(he_normal(rng, (hidden, channels), hidden), requires_grad=True)

    def __call__(self, f: Tensor) -> Tensor:
        if f.ndim != 4 or f.shape[1] != self.channels:
            raise ShapeError(f"channel attention expects (N,{self.channels},H,W), got {f.shape}")
        z = tc.global_avg_pool(f)                         # (N, C)
        s = tc.sigmoid(tc.matmul(tc.relu(tc.matmul(z, self.w_down)), self.w_up))
        return tc.mul(f, tc.reshape(s, (f.shape[0], self.channels, 1, 1)))

    def scale(self, f: Tensor) -> Tensor:
        """The gate values alone, shape (N, C); each entry lies in (0, 1)."""
        z = tc.global_avg_pool(f)
        return tc.sigmoid(tc.matmul(tc.relu(tc.matmul(z, self.w_down)), self.w_up))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}.down": self.w_down, f"{prefix}.up": self.w_up}


class SuperResolver:
    """Residual same-size restoration net with interleaved channel attention."""

    def __init__(self, rng, cfg: SrConfig | None = None, in_channels: int = 3):
        self.cfg = cfg or SrConfig()
        d, w, r = self.cfg.depth, self.cfg.width, self.cfg.reduction
        self.convs = [Conv2d(rng, in_channels, w, 3, padding=1)]
        self.convs += [Conv2d(rng, w, w, 3, padding=1) for _ in range(d - 2)]
        self.convs.append(Conv2d(rng, w, in_channels, 3, padding=1))
        self.gates = [ChannelAttention(rng, w, r) for _ in range(d - 1)]

    def __call__(self, lr_up: Tensor) -> Tensor:
        """Restore an LR image already resized to the target H x W."""
        h = lr_up
        for conv, gate in zip(self.convs[:-1], self.gates):
            h = gate(tc.relu(conv(h)))
        return tc.add(lr_up, self.convs[-1](h))

    def named_params(self, prefix: str = "sr") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.convs):
            out.update(conv.named_params(f"{prefix}.conv{i}"))
        for i, gate in enumerate(self.gates):
            out.update(gate.named_params(f"{prefix}.ca{i}"))
        return out


def sr_loss(restored: Tensor, target: Tensor) -> Tensor:
    """Sum over the batch of per-image mean absolute error."""
    if restored.shape != target.shape:
        raise ContractError(
            f"restored/target batches differ: {restored.shape} vs {target.shape}")
    per_pixel = 1.0 / float(np.prod(restored.shape[1:]))
    return tc.scalar_mul(tc.reduce_sum(tc.absolute(tc.sub(restored, target))), per_pixel)
