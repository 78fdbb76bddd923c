"""Dataset handling: a deterministic synthetic person-image generator,
cross-resolution synthesis, augmentation, the P x K pair sampler, and
manifest/PNG interchange.

Images travel as (H, W, 3) float arrays in [0, 1]; batches convert to the
NCHW layout the tensor core expects. Every random choice flows through an
explicit numpy Generator so identical seeds replay identical datasets,
splits, and batch streams.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from pshrnet import tensor as tc
from pshrnet.tensor import ContractError, Tensor

SPLITS = ("train", "query", "gallery")
MANIFEST_HEADER = ["path", "id", "camera", "split", "res_tag", "r"]
LR_RATES = (2, 3, 4)


@dataclass(eq=False)
class SampleRecord:
    pixels: np.ndarray          # (H, W, 3) floats in [0, 1]
    pid: int
    camera: int
    split: str = "train"
    res_tag: str = "HR"
    rate: int | None = None
    path: str | None = None

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels, dtype=np.float64)
        if self.pixels.ndim != 3 or self.pixels.shape[2] != 3:
            raise ContractError(f"record pixels must be (H, W, 3), got {self.pixels.shape}")
        if self.pixels.min() < 0.0 or self.pixels.max() > 1.0:
            raise ContractError("record pixels must lie in [0, 1]")
        if self.split not in SPLITS:
            raise ContractError(f"split must be one of {SPLITS}, got {self.split!r}")
        if self.res_tag not in ("HR", "LR"):
            raise ContractError(f"res_tag must be HR or LR, got {self.res_tag!r}")
        if self.res_tag == "LR" and self.rate not in LR_RATES:
            raise ContractError(f"LR records need a rate in {LR_RATES}, got {self.rate}")
        if self.res_tag == "HR" and self.rate is not None:
            raise ContractError("HR records carry no decimation rate")


@dataclass
class ToyConfig:
    """Geometry and difficulty knobs of the synthetic person generator."""

    n_ids: int = 16
    images_per_id: int = 12
    height: int = 64
    width: int = 32
    color_gap: float = 0.5          # min pairwise L1 between identity palettes
    noise_sigma: float = 0.02
    appearance_jitter: float = 0.12  # per-image global brightness shift bound
    queries_per_id: int = 2
    gallery_camera: int = 0
    query_camera: int = 1

    def __post_init__(self):
        if self.n_ids < 2:
            raise ContractError(f"need at least 2 identities, got {self.n_ids}")
        if self.images_per_id < 1:
            raise ContractError("need at least one image per identity")
        if self.height < 16 or self.width < 8:
            raise ContractError("toy images must be at least 16x8")


# -- image helpers ------------------------------------------------------------


def decimate_image(img: np.ndarray, r: int) -> np.ndarray:
    """Box-filter decimation of an (H, W, 3) image by rate r."""
    t = Tensor(np.ascontiguousarray(img.transpose(2, 0, 1))[None])
    return tc.downsample_decimate(t, r).data[0].transpose(1, 2, 0)


def upscale_image(img: np.ndarray, height: int, width: int, mode: str = "bilinear") -> np.ndarray:
    """Resample an (H, W, 3) image to the target size."""
    t = Tensor(np.ascontiguousarray(img.transpose(2, 0, 1))[None])
    fn = tc.resize_bilinear if mode == "bilinear" else tc.resize_nearest
    return fn(t, height, width).data[0].transpose(1, 2, 0)


# -- synthetic person generator ------------------------------------------------


def toy_palette(n_ids: int, rng: np.random.Generator, color_gap: float) -> np.ndarray:
    """Identity palettes: (torso rgb, leg rgb) rows with pairwise L1 > gap."""
    colors: list[np.ndarray] = []
    attempts = 0
    while len(colors) < n_ids:
        cand = rng.uniform(0.05, 0.95, size=6)
        if all(np.abs(cand - c).sum() > color_gap for c in colors):
            colors.append(cand)
        attempts += 1
        if attempts > 20000:
            raise ContractError(
                f"cannot place {n_ids} palettes with L1 gap {color_gap}; lower the gap")
    return np.stack(colors)


def _compose_person(height: int, width: int, torso: np.ndarray, legs: np.ndarray,
                    shift: int, brightness: float, noise: np.ndarray) -> np.ndarray:
    img = np.full((height, width, 3), 0.82)
    def rows(a, b):
        return slice(int(a * height), int(b * height))
    def cols(a, b):
        lo = max(0, int(a * width) + shift)
        hi = min(width, int(b * width) + shift)
        return slice(lo, hi)
    img[rows(0.05, 0.19), cols(0.34, 0.66)] = (0.85, 0.68, 0.55)   # head
    img[rows(0.19, 0.56), cols(0.16, 0.84)] = torso
    img[rows(0.56, 0.92), cols(0.20, 0.46)] = legs
    img[rows(0.56, 0.92), cols(0.54, 0.80)] = legs
    return np.clip(img + brightness + noise, 0.0, 1.0)


def toy_dataset(cfg: ToyConfig, rng_seed: int) -> list[SampleRecord]:
    """Procedural identity-colored person images over two synthetic cameras.

    Labels run 1..n_ids; cameras alternate 0/1 per image index. Identical
    seeds reproduce bitwise-identical pixels.
    """
    rng = np.random.default_rng(rng_seed)
    palette = toy_palette(cfg.n_ids, rng, cfg.color_gap)
    max_shift = max(1, cfg.width // 16)
    records = []
    for pid in range(1, cfg.n_ids + 1):
        torso, legs = palette[pid - 1, :3], palette[pid - 1, 3:]
        for j in range(cfg.images_per_id):
            camera = j % 2
            shift = int(rng.integers(-max_shift, max_shift + 1))
            brightness = rng.uniform(-cfg.appearance_jitter, cfg.appearance_jitter)
            noise = rng.normal(0.0, cfg.noise_sigma, size=(cfg.height, cfg.width, 3))
            img = _compose_person(cfg.height, cfg.width, torso, legs, shift, brightness, noise)
            records.append(SampleRecord(pixels=img, pid=pid, camera=camera))
    return records


def assign_single_shot_splits(records: list[SampleRecord], cfg: ToyConfig, rng_seed: int):
    """Tag records in place: one gallery image per identity from the gallery
    camera, a seeded handful of opposite-camera images as queries, the rest
    train."""
    rng = np.random.default_rng(rng_seed)
    by_pid: dict[int, list[int]] = {}
    for i, rec in enumerate(records):
        by_pid.setdefault(rec.pid, []).append(i)
    for pid, idxs in sorted(by_pid.items()):
        gal = [i for i in idxs if records[i].camera == cfg.gallery_camera]
        qry = [i for i in idxs if records[i].camera == cfg.query_camera]
        if not gal or not qry:
            raise ContractError(f"identity {pid} lacks images on one of the cameras")
        g_pick = int(rng.choice(gal))
        records[g_pick].split = "gallery"
        n_q = min(cfg.queries_per_id, len(qry))
        for q_pick in rng.choice(qry, size=n_q, replace=False):
            records[int(q_pick)].split = "query"


def synthesize_mlr(records: list[SampleRecord], cameras, rng_seed: int) -> list[SampleRecord]:
    """Decimate every record on the designated cameras by a per-image random
    rate, leaving other records untouched. Identity, camera, and split tags
    survive; decimated records shrink to H/r x W/r."""
    cameras = set(int(c) for c in cameras)
    present = {rec.camera for rec in records}
    unknown = cameras - present
    if unknown:
        raise ContractError(f"camera policy names absent cameras {sorted(unknown)}")
    rng = np.random.default_rng(rng_seed)
    out = []
    for rec in records:
        if rec.camera in cameras:
            r = int(rng.choice(LR_RATES))
            out.append(SampleRecord(pixels=decimate_image(rec.pixels, r), pid=rec.pid,
                                    camera=rec.camera, split=rec.split, res_tag="LR", rate=r))
        else:
            out.append(rec)
    return out


# -- augmentation --------------------------------------------------------------


def augment_params(rng: np.random.Generator, height: int, width: int):
    """Draw one (flip, crop_y, crop_x) augmentation tuple."""
    pad_h = max(1, round(0.1 * height))
    pad_w = max(1, round(0.1 * width))
    flip = bool(rng.random() < 0.5)
    dy = int(rng.integers(0, 2 * pad_h + 1))
    dx = int(rng.integers(0, 2 * pad_w + 1))
    return flip, dy, dx


def apply_augment(img: np.ndarray, flip: bool, dy: int, dx: int) -> np.ndarray:
    """Horizontal flip, zero-pad by 10 percent, crop back to the input size.

    ``dy = pad_h, dx = pad_w`` is the centered crop; with ``flip=False``
    that reproduces the input exactly.
    """
    h, w = img.shape[:2]
    if flip:
        img = img[:, ::-1]
    pad_h = max(1, round(0.1 * h))
    pad_w = max(1, round(0.1 * w))
    padded = np.zeros((h + 2 * pad_h, w + 2 * pad_w, img.shape[2]))
    padded[pad_h : pad_h + h, pad_w : pad_w + w] = img
    return padded[dy : dy + h, dx : dx + w].copy()


def augment(img: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Single-image convenience wrapper around the paired augmentation."""
    return apply_augment(img, *augment_params(rng, *img.shape[:2]))


# -- the P x K pair sampler ------------------------------------------------------


@dataclass(eq=False)
class Batch:
    """P identities x K instances of (HR image, upscaled-LR counterpart, label)."""

    hr: np.ndarray       # (B, 3, H, W)
    lr_up: np.ndarray    # (B, 3, H, W), decimated counterpart resized back up
    labels: np.ndarray   # (B,)
    rates: np.ndarray    # (B,) decimation rate per pair
    p: int
    k: int

    def __post_init__(self):
        ids, counts = np.unique(self.labels, return_counts=True)
        if len(ids) != self.p:
            raise ContractError(f"batch carries {len(ids)} identities, expected {self.p}")
        if not np.all(counts == self.k):
            raise ContractError(f"batch instance counts {counts.tolist()} != K={self.k}")
        if self.hr.shape != self.lr_up.shape:
            raise ContractError("HR and LR members must share shape after upscale")

    @property
    def size(self) -> int:
        return len(self.labels)


def pk_sampler(records: list[SampleRecord], p: int, k: int, rng_seed,
               augment_images: bool = True, upsample: str = "bilinear",
               passes: int = 1):
    """Yield one epoch of P x K batches over the given (HR) records.

    Each batch draws P distinct identities and K records per identity
    (resampling with replacement when an identity owns fewer than K). The
    LR member of each pair is built on the fly: decimate by a random rate,
    resize back, then apply one augmentation draw identically to both
    members. Every identity appears in at least one batch per epoch;
    ``passes`` repeats the shuffled identity sweep within the epoch.
    """
    rng = np.random.default_rng(rng_seed)
    by_pid: dict[int, list[SampleRecord]] = {}
    for rec in records:
        by_pid.setdefault(rec.pid, []).append(rec)
    ids = sorted(by_pid)
    if len(ids) < p:
        raise ContractError(f"sampler needs at least P={p} identities, got {len(ids)}")

    groups: list[list[int]] = []
    for _ in range(max(1, passes)):
        order = [ids[i] for i in rng.permutation(len(ids))]
        sweep = [order[i : i + p] for i in range(0, len(order), p)]
        if len(sweep[-1]) < p:
            missing = p - len(sweep[-1])
            pool = [i for i in ids if i not in sweep[-1]]
            sweep[-1].extend(rng.choice(pool, size=missing, replace=False).tolist())
        groups.extend(sweep)

    for group in groups:
        hrs, lrs, labels, rates = [], [], [], []
        for pid in group:
            pool = by_pid[pid]
            replace = len(pool) < k
            picks = rng.choice(len(pool), size=k, replace=replace)
            for idx in picks:
                img = pool[int(idx)].pixels
                r = int(rng.choice(LR_RATES))
                lr_up = upscale_image(decimate_image(img, r), *img.shape[:2], upsample)
                if augment_images:
                    params = augment_params(rng, *img.shape[:2])
                    hr_img = apply_augment(img, *params)
                    lr_img = apply_augment(lr_up, *params)
                else:
                    hr_img, lr_img = img, lr_up
                hrs.append(hr_img.transpose(2, 0, 1))
                lrs.append(lr_img.transpose(2, 0, 1))
                labels.append(pid)
                rates.append(r)
        yield Batch(hr=np.stack(hrs), lr_up=np.stack(lrs),
                    labels=np.array(labels), rates=np.array(rates), p=p, k=k)


# -- manifest and PNG interchange ------------------------------------------------


def save_png(img: np.ndarray, path: Path):
    Image.fromarray(np.round(np.clip(img, 0, 1) * 255).astype(np.uint8)).save(path)


def load_png(path: Path) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0


def save_dataset(records: list[SampleRecord], out_dir: Path, manifest_name: str = "manifest.csv") -> Path:
    """Write PNGs plus the manifest; paths are relative to the manifest."""
    out_dir = Path(out_dir)
    (out_dir / "images").mkdir(parents=True, exist_ok=True)
    rows = []
    for i, rec in enumerate(records):
        rel = f"images/{i:05d}_id{rec.pid:03d}_c{rec.camera}_{rec.split}.png"
        save_png(rec.pixels, out_dir / rel)
        rec.path = rel
        rows.append([rel, rec.pid, rec.camera, rec.split, rec.res_tag,
                     "" if rec.rate is None else rec.rate])
    manifest = out_dir / manifest_name
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(MANIFEST_HEADER)
    writer.writerows(rows)
    manifest.write_text(buf.getvalue(), encoding="utf-8")
    return manifest


def load_dataset(manifest_path: Path) -> list[SampleRecord]:
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    records = []
    with open(manifest_path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != MANIFEST_HEADER:
            raise ContractError(f"manifest header {header} != {MANIFEST_HEADER}")
        for row in reader:
            path, pid, camera, split, res_tag, rate = row
            records.append(SampleRecord(
                pixels=load_png(base / path), pid=int(pid), camera=int(camera),
                split=split, res_tag=res_tag, rate=int(rate) if rate else None,
                path=path))
    return records
