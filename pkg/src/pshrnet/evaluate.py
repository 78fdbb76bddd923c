"""Evaluation: single-shot ranking (CMC, mAP) over matching features, and
image-restoration quality (PSNR, SSIM).

Query and gallery images pass uniformly through the restorer and the
low-resolution branch; matching uses Euclidean distances between the test
features. Ranking ties break by gallery index so results are reproducible
and oracle-comparable.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pshrnet.data import SampleRecord, decimate_image, upscale_image
from pshrnet.reid import ReidNet, test_feature
from pshrnet.sr import SuperResolver
from pshrnet.tensor import ContractError, Tensor, no_grad

METRICS_HEADER = ["rank1", "rank5", "rank10", "mAP", "psnr_mean", "ssim_mean"]


@dataclass
class RankingResult:
    cmc: np.ndarray          # hit rate at ranks 1..G
    mean_ap: float
    ranks: np.ndarray        # 1-based rank of the first correct match per query
    n_excluded: int          # queries whose identity never appears in the gallery

    def rank_k(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])


def cmc_map(distances: np.ndarray, query_ids, gallery_ids) -> RankingResult:
    """Cumulative match characteristic and mean average precision.

    Gallery entries sort by ascending distance with ties broken by gallery
    index. AP per query is the mean of precision at each correct hit.
    Queries whose identity is absent from the gallery are excluded and
    counted.
    """
    distances = np.asarray(distances, dtype=np.float64)
    query_ids = np.asarray(query_ids)
    gallery_ids = np.asarray(gallery_ids)
    if distances.ndim != 2 or distances.shape != (len(query_ids), len(gallery_ids)):
        raise ContractError(f"distance matrix {distances.shape} does not match "
                            f"{len(query_ids)} queries x {len(gallery_ids)} gallery")
    if not np.isfinite(distances).all():
        raise ContractError("distance matrix must be finite")

    n_gallery = len(gallery_ids)
    hits_at = np.zeros(n_gallery)
    ranks = []
    aps = []
    excluded = 0
    for qi, qid in enumerate(query_ids):
        order = np.argsort(distances[qi], kind="stable")
        correct = gallery_ids[order] == qid
        if not correct.any():
            excluded += 1
            continue
        first = int(np.argmax(correct))
        ranks.append(first + 1)
        hits_at[first:] += 1
        positions = np.nonzero(correct)[0]
        precision = (np.arange(len(positions)) + 1) / (positions + 1)
        aps.append(precision.mean())
    if not ranks:
        raise ContractError("no query identity appears in the gallery")
    n_eval = len(ranks)
    return RankingResult(cmc=hits_at / n_eval, mean_ap=float(np.mean(aps)),
                         ranks=np.array(ranks), n_excluded=excluded)


def extract_features(restorer: SuperResolver, net_l: ReidNet,
                     records: list[SampleRecord], batch_size: int = 24) -> np.ndarray:
    """Matching features for records, all via the restore-then-embed pipeline.

    Records whose stored size differs from the net input (LR queries) are
    bilinearly resized up first.
    """
    cfg = net_l.backbone.cfg
    arrays = []
    for rec in records:
        img = rec.pixels
        if img.shape[:2] != (cfg.input_h, cfg.input_w):
            img = upscale_image(img, cfg.input_h, cfg.input_w, restorer.cfg.upsample)
        arrays.append(img.transpose(2, 0, 1))
    feats = []
    with no_grad():
        for lo in range(0, len(arrays), batch_size):
            x = Tensor(np.stack(arrays[lo : lo + batch_size]))
            bundle = net_l(restorer(x))
            feats.append(test_feature(bundle).data)
    return np.concatenate(feats, axis=0)


def distance_matrix(query_feats: np.ndarray, gallery_feats: np.ndarray) -> np.ndarray:
    """Euclidean distances, queries x gallery."""
    sq_q = np.sum(query_feats ** 2, axis=1)[:, None]
    sq_g = np.sum(gallery_feats ** 2, axis=1)[None, :]
    d2 = np.maximum(sq_q + sq_g - 2.0 * query_feats @ gallery_feats.T, 0.0)
    return np.sqrt(d2)


# -- image quality ---------------------------------------------------------------


def psnr(a: np.ndarray, b: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the images are identical."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"psnr shapes differ: {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def _gaussian_window(size: int = 11, sigma: float = 1.5) -> np.ndarray:
    offsets = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(offsets ** 2) / (2.0 * sigma ** 2))
    win = np.outer(g, g)
    return win / win.sum()


def _local_mean(img: np.ndarray, window: np.ndarray) -> np.ndarray:
    view = np.lib.stride_tricks.sliding_window_view(img, window.shape)
    return np.tensordot(view, window, axes=([2, 3], [0, 1]))


def ssim(a: np.ndarray, b: np.ndarray, peak: float = 1.0,
         window_size: int = 11, sigma: float = 1.5) -> float:
    """Mean structural similarity with a Gaussian window, per channel.

    Uses the conventional constants K1=0.01, K2=0.03 and valid-window
    statistics; channels average at the end.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ContractError(f"ssim shapes differ: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[:, :, None]
        b = b[:, :, None]
    if a.ndim != 3:
        raise ContractError(f"ssim expects (H, W) or (H, W, C) images, got {a.shape}")
    if a.shape[0] < window_size or a.shape[1] < window_size:
        raise ContractError(f"images {a.shape[:2]} smaller than the {window_size}x"
                            f"{window_size} window")
    window = _gaussian_window(window_size, sigma)
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    scores = []
    for ch in range(a.shape[2]):
        x, y = a[:, :, ch], b[:, :, ch]
        mu_x = _local_mean(x, window)
        mu_y = _local_mean(y, window)
        var_x = _local_mean(x * x, window) - mu_x ** 2
        var_y = _local_mean(y * y, window) - mu_y ** 2
        cov = _local_mean(x * y, window) - mu_x * mu_y
        score = ((2 * mu_x * mu_y + c1) * (2 * cov + c2)) / \
                ((mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2))
        scores.append(score.mean())
    return float(np.mean(scores))


def restoration_quality(restorer: SuperResolver, net_input: tuple[int, int],
                        records: list[SampleRecord], rng_seed,
                        batch_size: int = 24) -> dict[str, float]:
    """Restore seeded on-the-fly decimations of held-out HR records and score
    them against the originals. Returns mean PSNR/SSIM of the restorations
    plus mean L1 for both the restorations and the plain bilinear baseline."""
    hr = [r for r in records if r.res_tag == "HR"]
    if not hr:
        raise ContractError("restoration quality needs HR records")
    rng = np.random.default_rng(rng_seed)
    originals, upscaled = [], []
    for rec in hr:
        r = int(rng.choice((2, 3, 4)))
        up = upscale_image(decimate_image(rec.pixels, r), *net_input, restorer.cfg.upsample)
        originals.append(rec.pixels)
        upscaled.append(up)
    restored = []
    with no_grad():
        for lo in range(0, len(upscaled), batch_size):
            x = Tensor(np.stack([u.transpose(2, 0, 1) for u in upscaled[lo : lo + batch_size]]))
            restored.extend(restorer(x).data.transpose(0, 2, 3, 1))
    psnrs = [psnr(r, o) for r, o in zip(restored, originals)]
    ssims = [ssim(r, o) for r, o in zip(restored, originals)]
    l1_model = [float(np.mean(np.abs(r - o))) for r, o in zip(restored, originals)]
    l1_base = [float(np.mean(np.abs(u - o))) for u, o in zip(upscaled, originals)]
    return {
        "psnr_mean": float(np.mean(psnrs)),
        "ssim_mean": float(np.mean(ssims)),
        "l1_model": float(np.mean(l1_model)),
        "l1_baseline": float(np.mean(l1_base)),
    }


def write_metrics(path: Path, rank1: float, rank5: float, rank10: float,
                  mean_ap: float, psnr_mean: float, ssim_mean: float):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_HEADER)
    writer.writerow([f"{v:.10g}" for v in (rank1, rank5, rank10, mean_ap, psnr_mean, ssim_mean)])
    path.write_text(buf.getvalue(), encoding="utf-8")
