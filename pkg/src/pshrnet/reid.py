"""Representation head and the assembled re-identification network.

Each backbone stream is compressed by fused adaptive average/max pooling,
flattened into a per-branch sequence, and the four sequences concatenate
into the long combined sequence. Two affine layers then produce the
embedding and the class logits. At test time the combined sequence and the
embedding concatenate into the matching feature.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from pshrnet import tensor as tc
from pshrnet.backbone import BackboneConfig, MultiResolutionBackbone
from pshrnet.layers import Linear
from pshrnet.tensor import ContractError, ShapeError, Tensor

PS_ELEMENT_NAMES = ("seq1", "seq2", "seq3", "seq4", "seq5", "lc")


@dataclass
class HeadConfig:
    pool_sizes: tuple[int, int, int, int] = (4, 2, 2, 1)
    amp_weights: tuple[float, float, float, float] = (1.0, 1.0, 1.0, 1.0)
    embed_dim: int = 64
    class_count: int = 16

    def __post_init__(self):
        self.pool_sizes = tuple(int(p) for p in self.pool_sizes)
        self.amp_weights = tuple(float(a) for a in self.amp_weights)
        if len(self.pool_sizes) != 4 or any(p <= 0 for p in self.pool_sizes):
            raise ContractError(f"need four positive pooling sizes, got {self.pool_sizes}")
        if len(self.amp_weights) != 4:
            raise ContractError(f"need four max-pool weights, got {self.amp_weights}")
        if self.embed_dim <= 0 or self.class_count <= 0:
            raise ContractError("embed_dim and class_count must be positive")

    def seq_lengths(self, widths) -> list[int]:
        """Per-branch sequence lengths plus the combined length, five entries."""
        per = [w * p * p for w, p in zip(widths, self.pool_sizes)]
        return per + [sum(per)]


@dataclass
class SequenceBundle:
    """Head outputs for a batch: four branch sequences, their concatenation,
    the embedding, and the class logits. All fields are (batch, dim) tensors."""

    seqs: tuple[Tensor, Tensor, Tensor, Tensor]
    seq5: Tensor
    embed: Tensor
    logits: Tensor

    def element(self, name: str) -> Tensor:
        """Look up a member of the alignment-eligible ordered set by name."""
        if name == "seq5":
            return self.seq5
        if name == "lc":
            return self.logits
        if name in ("seq1", "seq2", "seq3", "seq4"):
            return self.seqs[int(name[3]) - 1]
        raise ContractError(f"unknown bundle element {name!r}; choose from {PS_ELEMENT_NAMES}")

    @property
    def batch_size(self) -> int:
        return self.seq5.shape[0]


class RepresentationHead:
    """Maps the four stream feature maps to a SequenceBundle."""

    def __init__(self, rng, widths, cfg: HeadConfig | None = None):
        self.cfg = cfg or HeadConfig()
        self.widths = tuple(widths)
        total = self.cfg.seq_lengths(self.widths)[-1]
        # small classifier init keeps the initial softmax near uniform, so
        # early cross-entropy steps separate classes instead of shrinking
        # feature magnitudes
        self.fc1 = Linear(rng, total, self.cfg.embed_dim, init_scale=0.1)
        self.fc2 = Linear(rng, self.cfg.embed_dim, self.cfg.class_count, init_scale=0.01)

    def map_branch(self, f: Tensor, n: int) -> Tensor:
        """Pool branch n's map to p_n x p_n with fused avg+max, then flatten."""
        if not 0 <= n < 4:
            raise ContractError(f"branch index must be 0..3, got {n}")
        p = self.cfg.pool_sizes[n]
        lam = self.cfg.amp_weights[n]
        pooled = tc.add(tc.adaptive_pool(f, p, p, "avg"),
                        tc.scalar_mul(tc.adaptive_pool(f, p, p, "max"), lam))
        return tc.reshape(pooled, (f.shape[0], f.shape[1] * p * p))

    def __call__(self, maps) -> SequenceBundle:
        if len(maps) != 4:
            raise ContractError(f"head expects four feature maps, got {len(maps)}")
        seqs = tuple(self.map_branch(f, n) for n, f in enumerate(maps))
        seq5 = tc.concat(seqs, axis=1)
        embed = self.fc1(seq5)
        logits = self.fc2(embed)
        return SequenceBundle(seqs=seqs, seq5=seq5, embed=embed, logits=logits)

    def named_params(self, prefix: str = "head") -> dict[str, Tensor]:
        return {**self.fc1.named_params(f"{prefix}.fc1"),
                **self.fc2.named_params(f"{prefix}.fc2")}


class ReidNet:
    """Backbone plus representation head."""

    def __init__(self, rng, backbone_cfg: BackboneConfig | None = None,
                 head_cfg: HeadConfig | None = None):
        self.backbone = MultiResolutionBackbone(rng, backbone_cfg)
        self.head = RepresentationHead(rng, self.backbone.cfg.widths, head_cfg)

    def __call__(self, images: Tensor) -> SequenceBundle:
        return self.head(self.backbone(images))

    def named_params(self, prefix: str = "reid") -> dict[str, Tensor]:
        return {**self.backbone.named_params(f"{prefix}.backbone"),
                **self.head.named_params(f"{prefix}.head")}


def test_feature(bundle: SequenceBundle) -> Tensor:
    """Matching feature: the combined sequence concatenated with the embedding."""
    return tc.concat((bundle.seq5, bundle.embed), axis=1)
