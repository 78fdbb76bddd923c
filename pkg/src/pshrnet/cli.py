"""Command-line entry point: synth | train | eval | gradcheck.

``synth`` writes the synthetic dataset and manifest, ``train`` runs one of
the two training phases and writes checkpoint plus loss curve, ``eval``
scores a phase-2 checkpoint (ranking and restoration quality), and
``gradcheck`` runs the finite-difference suite.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from pshrnet import checkpoint as ckpt
from pshrnet import data as dat
from pshrnet import evaluate as ev
from pshrnet import trainer as tr
from pshrnet.config import ConfigError, RunConfig, load_config
from pshrnet.gradcheck import format_reports, run_suite
from pshrnet.reid import ReidNet
from pshrnet.sr import SuperResolver
from pshrnet.tensor import ContractError, ShapeError


def _load_cfg(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = dataclasses.replace(
            cfg, train=dataclasses.replace(cfg.train, seed=args.seed))
    return cfg


def _relabel(records: list[dat.SampleRecord]) -> int:
    """Map training identities onto 1..M (consistently across all splits)."""
    train_ids = sorted({r.pid for r in records if r.split == "train"})
    mapping = {pid: i + 1 for i, pid in enumerate(train_ids)}
    next_free = len(train_ids) + 1
    for rec in records:
        if rec.pid not in mapping:
            mapping[rec.pid] = next_free
            next_free += 1
        rec.pid = mapping[rec.pid]
    return len(train_ids)


def cmd_synth(args) -> int:
    cfg = _load_cfg(args)
    seed = cfg.train.seed
    toy_cfg = cfg.data.toy_config(cfg.backbone.input_h, cfg.backbone.input_w)
    records = dat.toy_dataset(toy_cfg, [seed, 1])
    dat.assign_single_shot_splits(records, toy_cfg, [seed, 2])
    queries = [r for r in records if r.split == "query"]
    degraded = dat.synthesize_mlr(queries, {toy_cfg.query_camera}, [seed, 3])
    it = iter(degraded)
    records = [next(it) if r.split == "query" else r for r in records]
    manifest = dat.save_dataset(records, Path(cfg.data.root), cfg.data.manifest)
    counts = {s: sum(1 for r in records if r.split == s) for s in dat.SPLITS}
    print(f"wrote {len(records)} images and {manifest} "
          f"(train={counts['train']}, query={counts['query']}, gallery={counts['gallery']})")
    return 0


def _load_records(cfg: RunConfig) -> list[dat.SampleRecord]:
    manifest = cfg.data.manifest_path()
    if not manifest.exists():
        raise ContractError(f"manifest {manifest} not found; run `pshrnet synth` first")
    return dat.load_dataset(manifest)


def cmd_train(args) -> int:
    cfg = _load_cfg(args)
    records = _load_records(cfg)
    n_train_ids = _relabel(records)
    if cfg.auto_class_count:
        cfg = cfg.with_class_count(n_train_ids)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.phase == 1:
        net, rows = tr.train_phase1(cfg.train, cfg.losses, cfg.backbone, cfg.head, records)
        ckpt_path = out / "phase1.pshr"
        ckpt.save_checkpoint(net.named_params(), ckpt_path)
        tr.write_loss_curve(out / "loss_phase1.csv", rows)
        print(f"phase 1 done: {ckpt_path} ({len(net.named_params())} tensors), "
              f"final L_ID {rows[-1][2]:.6g}")
        return 0

    if not args.phase1_ckpt:
        raise ContractError("phase-1 checkpoint required (pass --phase1-ckpt)")
    phase1_params = ckpt.load_checkpoint(args.phase1_ckpt)
    restorer, net_l, _net_h, rows = tr.train_phase2(
        cfg.train, cfg.losses, cfg.backbone, cfg.head, cfg.sr, phase1_params, records)
    ckpt_path = out / "phase2.pshr"
    ckpt.save_checkpoint(tr.phase2_params(restorer, net_l), ckpt_path)
    tr.write_loss_curve(out / "loss_phase2.csv", rows)
    print(f"phase 2 done: {ckpt_path}, final L_TOTAL {rows[-1][5]:.6g}")
    return 0


def build_phase2_models(cfg: RunConfig, params: dict[str, np.ndarray]):
    """Construct restorer + low branch matching a phase-2 checkpoint."""
    if cfg.auto_class_count:
        key = "reid_l.head.fc2.b"
        if key not in params:
            raise ContractError("checkpoint lacks the phase-2 layout "
                                "(expected sr.* and reid_l.* tensors)")
        cfg = cfg.with_class_count(int(params[key].shape[0]))
    rng = np.random.default_rng(0)  # shapes only; values come from the checkpoint
    restorer = SuperResolver(rng, cfg.sr)
    net_l = ReidNet(rng, cfg.backbone, cfg.head)
    ckpt.load_into({**restorer.named_params("sr"), **net_l.named_params("reid_l")}, params)
    return restorer, net_l


def evaluate_checkpoint(cfg: RunConfig, params: dict[str, np.ndarray],
                        records: list[dat.SampleRecord], seed) -> dict[str, float]:
    """Rank queries against the gallery and score restoration quality."""
    restorer, net_l = build_phase2_models(cfg, params)
    queries = [r for r in records if r.split == "query"]
    gallery = [r for r in records if r.split == "gallery"]
    if not queries or not gallery:
        raise ContractError("evaluation needs both query and gallery rows in the manifest")
    feats_q = ev.extract_features(restorer, net_l, queries)
    feats_g = ev.extract_features(restorer, net_l, gallery)
    ranking = ev.cmc_map(ev.distance_matrix(feats_q, feats_g),
                         [r.pid for r in queries], [r.pid for r in gallery])
    quality = ev.restoration_quality(
        restorer, (cfg.backbone.input_h, cfg.backbone.input_w), gallery, seed)
    return {
        "rank1": ranking.rank_k(1), "rank5": ranking.rank_k(5), "rank10": ranking.rank_k(10),
        "mAP": ranking.mean_ap, **quality,
    }


def cmd_eval(args) -> int:
    cfg = _load_cfg(args)
    records = _load_records(cfg)
    _relabel(records)
    params = ckpt.load_checkpoint(args.ckpt)
    metrics = evaluate_checkpoint(cfg, params, records, [cfg.train.seed, 4])
    out = Path(args.out)
    ev.write_metrics(out / "metrics.csv", metrics["rank1"], metrics["rank5"],
                     metrics["rank10"], metrics["mAP"], metrics["psnr_mean"],
                     metrics["ssim_mean"])
    for key in ("rank1", "rank5", "rank10", "mAP", "psnr_mean", "ssim_mean"):
        print(f"{key} = {metrics[key]:.6g}")
    print(f"wrote {out / 'metrics.csv'}")
    return 0


def cmd_gradcheck(args) -> int:
    reports = run_suite(n_probes=args.probes)
    print(format_reports(reports))
    failed = [r for r in reports if not r.passed]
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed")
    return 1 if failed else 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="pshrnet",
        description="Cross-resolution person re-identification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_required=True):
        p.add_argument("--config", required=config_required, help="INI configuration file")
        p.add_argument("--seed", type=int, default=None, help="override the configured seed")
        p.add_argument("--out", default="runs", help="output directory for artifacts")

    common(sub.add_parser("synth", help="write the synthetic dataset and manifest"))

    p_train = sub.add_parser("train", help="run one training phase")
    common(p_train)
    p_train.add_argument("--phase", type=int, choices=(1, 2), required=True)
    p_train.add_argument("--phase1-ckpt", default=None,
                         help="phase-1 checkpoint (required for phase 2)")

    p_eval = sub.add_parser("eval", help="score a phase-2 checkpoint")
    common(p_eval)
    p_eval.add_argument("--ckpt", required=True, help="phase-2 checkpoint path")

    p_gc = sub.add_parser("gradcheck", help="run the finite-difference suite")
    p_gc.add_argument("--probes", type=int, default=5, help="random probes per check")

    args = parser.parse_args(argv)
    handlers = {"synth": cmd_synth, "train": cmd_train,
                "eval": cmd_eval, "gradcheck": cmd_gradcheck}
    try:
        return handlers[args.command](args)
    except (ConfigError, ContractError, ShapeError, FileNotFoundError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
