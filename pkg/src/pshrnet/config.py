"""Run configuration: one INI-style text file covering every module.

Sections are [backbone], [head], [sr], [losses], [train], [data] with
key=value lines and ``#`` comments. Parsing is strict: unknown sections or
keys, duplicate keys, and unparseable values fail with the offending line
number. ``class_count = auto`` defers the logit width to the training data
(or, at eval time, to the checkpoint).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

from pshrnet.backbone import BackboneConfig
from pshrnet.data import ToyConfig
from pshrnet.losses import LossWeights
from pshrnet.reid import HeadConfig
from pshrnet.sr import SrConfig
from pshrnet.trainer import TrainRunConfig


class ConfigError(ValueError):
    """Malformed configuration text; message carries the line number."""


@dataclass
class DataConfig:
    root: str = "data/toy"
    manifest: str = "manifest.csv"
    n_ids: int = 16
    images_per_id: int = 12
    color_gap: float = 0.5
    noise_sigma: float = 0.02
    appearance_jitter: float = 0.12
    queries_per_id: int = 2
    gallery_camera: int = 0
    query_camera: int = 1

    def toy_config(self, height: int, width: int) -> ToyConfig:
        return ToyConfig(n_ids=self.n_ids, images_per_id=self.images_per_id,
                         height=height, width=width, color_gap=self.color_gap,
                         noise_sigma=self.noise_sigma,
                         appearance_jitter=self.appearance_jitter,
                         queries_per_id=self.queries_per_id,
                         gallery_camera=self.gallery_camera,
                         query_camera=self.query_camera)

    def manifest_path(self) -> Path:
        return Path(self.root) / self.manifest


@dataclass
class RunConfig:
    backbone: BackboneConfig
    head: HeadConfig
    sr: SrConfig
    losses: LossWeights
    train: TrainRunConfig
    data: DataConfig
    auto_class_count: bool = True

    def with_class_count(self, m: int) -> "RunConfig":
        head = dataclasses.replace(self.head, class_count=m)
        return dataclasses.replace(self, head=head, auto_class_count=False)


def _int(v: str) -> int:
    return int(v)


def _float(v: str) -> float:
    return float(v)


def _str(v: str) -> str:
    return v


def _bool(v: str) -> bool:
    low = v.lower()
    if low in ("true", "yes", "1", "on"):
        return True
    if low in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"expected a boolean, got {v!r}")


def _int_tuple(v: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in v.split(","))

def _float_tuple(v: str) -> tuple[float, ...]:
    return tuple(float(part.strip()) for part in v.split(","))


def _pool_sizes(v: str):
    if v.strip().lower() == "branch-index":
        return (1, 2, 3, 4)  # pooling size equals the branch index
    return _int_tuple(v)


def _class_count(v: str):
    if v.strip().lower() == "auto":
        return "auto"
    return int(v)


def _name_tuple(v: str) -> tuple[str, ...]:
    return tuple(part.strip() for part in v.split(",") if part.strip())


_SCHEMA: dict[str, dict[str, object]] = {
    "backbone": {
        "widths": _int_tuple,
        "blocks_per_stage": _int,
        "stem_stride": _int,
        "input_h": _int,
        "input_w": _int,
    },
    "head": {
        "pool_sizes": _pool_sizes,
        "amp_weights": _float_tuple,
        "embed_dim": _int,
        "class_count": _class_count,
    },
    "sr": {
        "depth": _int,
        "width": _int,
        "reduction": _int,
        "upsample": _str,
    },
    "losses": {
        "margin": _float,
        "epsilon": _float,
        "lambda_ce": _float,
        "lambda_bh": _float,
        "lambda_sr": _float,
        "lambda_ps": _float,
        "ps_combination": _name_tuple,
        "normalize_by_batch": _bool,
    },
    "train": {
        "epochs_phase1": _int,
        "epochs_phase2": _int,
        "p": _int,
        "k": _int,
        "seed": _int,
        "backbone_lr": _float,
        "sr_lr": _float,
        "weight_decay": _float,
        "momentum": _float,
        "lr_decay_factor": _float,
        "lr_decay_interval": _int,
        "freeze_high_branch": _bool,
        "id_branch": _str,
        "augment": _bool,
        "checkpoint_every": _int,
    },
    "data": {
        "root": _str,
        "manifest": _str,
        "n_ids": _int,
        "images_per_id": _int,
        "color_gap": _float,
        "noise_sigma": _float,
        "appearance_jitter": _float,
        "queries_per_id": _int,
        "gallery_camera": _int,
        "query_camera": _int,
    },
}


def parse_config_text(text: str) -> dict[str, dict[str, object]]:
    """Parse INI text into per-section kwargs, validating against the schema."""
    values: dict[str, dict[str, object]] = {name: {} for name in _SCHEMA}
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            name = line[1:-1].strip().lower()
            if name not in _SCHEMA:
                raise ConfigError(f"line {lineno}: unknown section [{name}]")
            section = name
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw.strip()!r}")
        if section is None:
            raise ConfigError(f"line {lineno}: key outside of any section")
        key, _, value = line.partition("=")
        key = key.strip().lower()
        value = value.strip()
        schema = _SCHEMA[section]
        if key not in schema:
            raise ConfigError(f"line {lineno}: unknown key {key!r} in section [{section}]")
        if key in values[section]:
            raise ConfigError(f"line {lineno}: duplicate key {key!r} in section [{section}]")
        try:
            values[section][key] = schema[key](value)
        except ValueError as err:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {err}") from err
    return values


def build_run_config(values: dict[str, dict[str, object]]) -> RunConfig:
    head_kwargs = dict(values["head"])
    auto = head_kwargs.get("class_count", "auto") == "auto"
    if auto:
        head_kwargs.pop("class_count", None)
    return RunConfig(
        backbone=BackboneConfig(**values["backbone"]),
        head=HeadConfig(**head_kwargs),
        sr=SrConfig(**values["sr"]),
        losses=LossWeights(**values["losses"]),
        train=TrainRunConfig(**values["train"]),
        data=DataConfig(**values["data"]),
        auto_class_count=auto,
    )


def load_config(path: Path) -> RunConfig:
    text = Path(path).read_text(encoding="utf-8")
    return build_run_config(parse_config_text(text))
