"""Loss-ablation experiment: identity loss alone, plus restoration, plus
pseudo-siamese alignment, sharing one phase-1 run.

Variants reuse the same phase-1 weights and differ only in the loss
weights of phase 2, so Rank-1 differences isolate the contribution of each
objective term.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from pshrnet import checkpoint as ckpt
from pshrnet import trainer as tr
from pshrnet.cli import evaluate_checkpoint, _relabel
from pshrnet.config import RunConfig
from pshrnet.data import load_dataset

ABLATION_VARIANTS = ("id", "sr_id", "sr_id_ps")


def variant_weights(cfg: RunConfig, variant: str):
    w = cfg.losses
    if variant == "id":
        return dataclasses.replace(w, lambda_sr=0.0, lambda_ps=0.0)
    if variant == "sr_id":
        return dataclasses.replace(w, lambda_ps=0.0)
    if variant == "sr_id_ps":
        return w
    raise ValueError(f"unknown ablation variant {variant!r}")


def run_ablation(cfg: RunConfig, out_dir: Path, variants=ABLATION_VARIANTS) -> dict[str, dict]:
    """Train phase 1 once, then one phase 2 per loss variant; evaluate each.

    Returns per-variant metric dicts; artifacts (checkpoints, loss curves,
    metrics) land under ``out_dir``.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = load_dataset(cfg.data.manifest_path())
    n_ids = _relabel(records)
    if cfg.auto_class_count:
        cfg = cfg.with_class_count(n_ids)

    net_h, rows1 = tr.train_phase1(cfg.train, cfg.losses, cfg.backbone, cfg.head, records)
    phase1_path = out_dir / "phase1.pshr"
    ckpt.save_checkpoint(net_h.named_params(), phase1_path)
    tr.write_loss_curve(out_dir / "loss_phase1.csv", rows1)
    phase1_params = ckpt.load_checkpoint(phase1_path)

    results: dict[str, dict] = {}
    for variant in variants:
        weights = variant_weights(cfg, variant)
        restorer, net_l, _, rows2 = tr.train_phase2(
            cfg.train, weights, cfg.backbone, cfg.head, cfg.sr, phase1_params, records)
        ckpt_path = out_dir / f"phase2_{variant}.pshr"
        ckpt.save_checkpoint(tr.phase2_params(restorer, net_l), ckpt_path)
        tr.write_loss_curve(out_dir / f"loss_phase2_{variant}.csv", rows2)
        params = ckpt.load_checkpoint(ckpt_path)
        results[variant] = evaluate_checkpoint(cfg, params, records, [cfg.train.seed, 4])
    return results
