"""Multi-resolution backbone: four parallel streams with dense cross fusion.

Stream n runs at 1/2^(n+1) of the input resolution (with the default stem).
Streams are spawned progressively: phase s carries s streams, and every
phase boundary propagates each live stream to every next-phase stream:
down-paths are chains of stride-2 convs, up-paths are bilinear resizes
followed by a 1x1 conv, and contributions merge by addition.
"""

from __future__ import annotations

from dataclasses import dataclass

from pshrnet import tensor as tc
from pshrnet.layers import Conv2d
from pshrnet.tensor import ContractError, ShapeError, Tensor


@dataclass
class BackboneConfig:
    widths: tuple[int, int, int, int] = (8, 16, 32, 64)
    blocks_per_stage: int = 1
    stem_stride: int = 4
    input_h: int = 64
    input_w: int = 32

    def __post_init__(self):
        self.widths = tuple(int(w) for w in self.widths)
        if len(self.widths) != 4 or any(w <= 0 for w in self.widths):
            raise ContractError(f"need four positive stream widths, got {self.widths}")
        if self.stem_stride not in (1, 2, 4):
            raise ContractError(f"stem stride must be 1, 2 or 4, got {self.stem_stride}")
        if self.blocks_per_stage < 1:
            raise ContractError("blocks_per_stage must be >= 1")
        full = self.stem_stride * 8  # stream 4 sits 8x below the stem output
        if self.input_h % full or self.input_w % full:
            raise ContractError(
                f"input {self.input_h}x{self.input_w} must be divisible by {full}")

    def stream_sizes(self) -> list[tuple[int, int]]:
        """Spatial extent of each stream's feature map."""
        return [(self.input_h // (self.stem_stride << n), self.input_w // (self.stem_stride << n))
                for n in range(4)]


class ResidualBlock:
    """conv3x3-relu-conv3x3 with identity skip, relu after the merge.

    The second conv starts at zero so every block begins as the identity;
    without normalization layers this keeps the from-scratch net trainable.
    """

    def __init__(self, rng, channels: int):
        self.c1 = Conv2d(rng, channels, channels, 3, padding=1)
        self.c2 = Conv2d(rng, channels, channels, 3, padding=1)
        self.c2.w.data[:] = 0.0

    def __call__(self, x: Tensor) -> Tensor:
        return tc.relu(tc.add(x, self.c2(tc.relu(self.c1(x)))))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.c1.named_params(f"{prefix}.conv0"),
                **self.c2.named_params(f"{prefix}.conv1")}


class _DownPath:
    """Chain of stride-2 3x3 convs; the last step maps onto the target width."""

    def __init__(self, rng, in_ch: int, out_ch: int, steps: int):
        self.convs = []
        for i in range(steps):
            last = i == steps - 1
            self.convs.append(Conv2d(rng, in_ch, out_ch if last else in_ch, 3,
                                     stride=2, padding=1))

    def __call__(self, x: Tensor) -> Tensor:
        for i, conv in enumerate(self.convs):
            x = conv(x)
            if i < len(self.convs) - 1:
                x = tc.relu(x)
        return x

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.convs):
            out.update(conv.named_params(f"{prefix}.conv{i}"))
        return out


class _UpPath:
    """Bilinear resize to the target grid, then a 1x1 channel projection."""

    def __init__(self, rng, in_ch: int, out_ch: int, target: tuple[int, int]):
        self.target = target
        self.proj = Conv2d(rng, in_ch, out_ch, 1)

    def __call__(self, x: Tensor) -> Tensor:
        return self.proj(tc.resize_bilinear(x, *self.target))

    def named_params(self, prefix: str) -> dict[str, Tensor]:
        return self.proj.named_params(f"{prefix}.conv0")


class MultiResolutionBackbone:
    """Four-stream parallel backbone producing one feature map per stream."""

    def __init__(self, rng, cfg: BackboneConfig | None = None):
        self.cfg = cfg or BackboneConfig()
        w = self.cfg.widths
        sizes = self.cfg.stream_sizes()

        self.stem = []
        down_steps = {1: 0, 2: 1, 4: 2}[self.cfg.stem_stride]
        if down_steps == 0:
            self.stem.append(Conv2d(rng, 3, w[0], 3, padding=1))
        else:
            self.stem.append(Conv2d(rng, 3, w[0], 3, stride=2, padding=1))
            for _ in range(down_steps - 1):
                self.stem.append(Conv2d(rng, w[0], w[0], 3, stride=2, padding=1))

        # blocks[s][n]: residual blocks of stream n during phase s+1
        self.blocks = [[[ResidualBlock(rng, w[n]) for _ in range(self.cfg.blocks_per_stage)]
                        for n in range(s + 1)]
                       for s in range(4)]

        # fuse[s][(u, t)]: path from stream u into next-phase stream t after phase s+1
        self.fuse: list[dict[tuple[int, int], object]] = []
        for s in range(3):
            paths: dict[tuple[int, int], object] = {}
            for t in range(s + 2):
                for u in range(s + 1):
                    if u == t:
                        continue
                    if u < t:
                        paths[(u, t)] = _DownPath(rng, w[u], w[t], t - u)
                    else:
                        paths[(u, t)] = _UpPath(rng, w[u], w[t], sizes[t])
            self.fuse.append(paths)

    def __call__(self, image: Tensor) -> list[Tensor]:
        cfg = self.cfg
        if image.ndim != 4 or image.shape[1] != 3:
            raise ShapeError(f"backbone expects (N,3,H,W), got {image.shape}")
        if image.shape[2] != cfg.input_h or image.shape[3] != cfg.input_w:
            raise ShapeError(
                f"backbone configured for {cfg.input_h}x{cfg.input_w}, got "
                f"{image.shape[2]}x{image.shape[3]}")

        h = tc.add(image, -0.5)  # center [0,1] pixels so conv responses are signed
        for conv in self.stem:
            h = tc.relu(conv(h))
        streams = [h]
        for s in range(4):
            streams = [self._run_blocks(s, n, f) for n, f in enumerate(streams)]
            if s < 3:
                streams = self._fuse(s, streams)
        return streams

    def _run_blocks(self, s: int, n: int, f: Tensor) -> Tensor:
        for block in self.blocks[s][n]:
            f = block(f)
        return f

    def _fuse(self, s: int, streams: list[Tensor]) -> list[Tensor]:
        merged = []
        for t in range(len(streams) + 1):
            total = None
            for u, f in enumerate(streams):
                part = f if u == t else self.fuse[s][(u, t)](f)
                total = part if total is None else tc.add(total, part)
            merged.append(tc.relu(total))
        return merged

    def named_params(self, prefix: str = "backbone") -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for i, conv in enumerate(self.stem):
            out.update(conv.named_params(f"{prefix}.stem{i}"))
        for s in range(4):
            for n in range(s + 1):
                for b, block in enumerate(self.blocks[s][n]):
                    out.update(block.named_params(f"{prefix}.stage{s + 1}.stream{n + 1}.block{b}"))
        for s, paths in enumerate(self.fuse):
            for (u, t), path in sorted(paths.items()):
                out.update(path.named_params(f"{prefix}.fuse{s + 1}.f{u + 1}t{t + 1}"))
        return out
