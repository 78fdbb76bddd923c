"""Finite-difference verification suite for every differentiable op and loss.

Probe generators keep sample points away from kinks: relu/abs operands stay
off zero, pooling and extreme reductions get well-separated values, and the
hinge/L1 losses resample until every active argument clears the finite-
difference step by a wide margin.
"""

from __future__ import annotations

import numpy as np

from pshrnet import tensor as tc
from pshrnet.losses import ce_label_smooth, id_loss, ps_loss, total_loss, triplet_bh, LossWeights
from pshrnet.reid import SequenceBundle
from pshrnet.sr import sr_loss
from pshrnet.tensor import GradCheckReport, Tensor, grad_check

DEFAULT_TOL = 1e-4
FD_STEP = 1e-5


def _away_from_zero(rng, shape, floor=0.05):
    x = rng.standard_normal(shape)
    sign = np.where(x >= 0, 1.0, -1.0)
    return x + sign * floor


def _well_separated(rng, shape):
    """Values with pairwise gaps far above the finite-difference step."""
    n = int(np.prod(shape))
    return rng.permutation(np.linspace(-1.0, 1.0, n)).reshape(shape)


def _bundle(seqs, logits=None) -> SequenceBundle:
    return SequenceBundle(seqs=tuple(seqs), seq5=tc.concat(seqs, axis=1),
                          embed=None, logits=logits)


def _triplet_fd_safe(seqs, labels, margin, gap=1e-3) -> bool:
    """True when every hardest-pair competition and hinge argument clears
    ``gap``, so central differences never cross a routing or relu kink."""
    mats = list(seqs) + [np.concatenate(seqs, axis=1)]
    same = labels[:, None] == labels[None, :]
    for x in mats:
        sq = (x ** 2).sum(axis=1)
        d = np.sqrt(np.maximum(sq[:, None] + sq[None, :] - 2.0 * x @ x.T, 0.0))
        for i in range(len(labels)):
            pos = np.sort(d[i][same[i]])
            neg = np.sort(d[i][~same[i]])
            if len(pos) >= 2 and pos[-1] - pos[-2] < gap:
                return False
            if len(neg) >= 2 and neg[1] - neg[0] < gap:
                return False
            if abs(margin + pos[-1] - neg[0]) < gap:
                return False
    return True


def _safe_triplet_seqs(rng, labels, margin, dims=(3, 2, 3, 2)):
    """Four branch embeddings that are finite-difference-safe for the
    batch-hard triplet across all five sequences."""
    batch = len(labels)
    while True:
        seqs = tuple(rng.standard_normal((batch, d)) * 2.0 for d in dims)
        if _triplet_fd_safe(seqs, labels, margin):
            return seqs


def _safe_l1_pair(rng, shape, floor=0.05):
    a = rng.standard_normal(shape)
    gap = floor + np.abs(rng.standard_normal(shape))
    sign = np.where(rng.random(shape) < 0.5, 1.0, -1.0)
    return a, a + sign * gap


def op_checks(n_probes: int = 5, tol: float = DEFAULT_TOL, seed: int = 0) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    reports = []

    def run(name, fn, probe_fn, tol_=tol):
        probes = [probe_fn() for _ in range(n_probes)]
        reports.append(grad_check(name, fn, probes, tol=tol_, step=FD_STEP, rng=rng))

    run("add", tc.add, lambda: (rng.standard_normal((2, 3)), rng.standard_normal((2, 3))))
    run("add_broadcast", tc.add, lambda: (rng.standard_normal((2, 1, 3)), rng.standard_normal((4, 3))))
    run("sub", tc.sub, lambda: (rng.standard_normal((3, 2)), rng.standard_normal((3, 2))))
    run("mul", tc.mul, lambda: (rng.standard_normal((2, 4)), rng.standard_normal((2, 4))))
    run("mul_broadcast", tc.mul, lambda: (rng.standard_normal((2, 3, 1)), rng.standard_normal((3, 4))))
    run("scalar_mul", lambda a: tc.scalar_mul(a, 1.7), lambda: (rng.standard_normal((3, 3)),))
    run("relu", tc.relu, lambda: (_away_from_zero(rng, (4, 4)),))
    run("sigmoid", tc.sigmoid, lambda: (rng.standard_normal(8),))
    run("abs", tc.absolute, lambda: (_away_from_zero(rng, (3, 5)),))
    run("exp", tc.exp, lambda: (rng.standard_normal((2, 3)),))
    run("log", tc.log, lambda: (rng.uniform(0.1, 2.0, (2, 3)),))
    run("sqrt", tc.sqrt, lambda: (rng.uniform(0.1, 2.0, (2, 3)),))
    run("matmul", tc.matmul, lambda: (rng.standard_normal((3, 4)), rng.standard_normal((4, 2))))
    run("transpose2d", tc.transpose2d, lambda: (rng.standard_normal((3, 4)),))
    run("conv2d", lambda x, w: tc.conv2d(x, w, 1, 1),
        lambda: (rng.standard_normal((2, 3, 5, 5)), rng.standard_normal((4, 3, 3, 3))), 1e-5)
    run("conv2d_stride2", lambda x, w: tc.conv2d(x, w, 2, 1),
        lambda: (rng.standard_normal((2, 3, 6, 5)), rng.standard_normal((4, 3, 3, 3))), 1e-5)
    run("conv2d_1x1", lambda x, w: tc.conv2d(x, w, 1, 0),
        lambda: (rng.standard_normal((2, 4, 3, 3)), rng.standard_normal((3, 4, 1, 1))), 1e-5)
    run("adaptive_avg_pool", lambda x: tc.adaptive_pool(x, 2, 2, "avg"),
        lambda: (rng.standard_normal((2, 2, 5, 7)),))
    run("adaptive_max_pool", lambda x: tc.adaptive_pool(x, 2, 2, "max"),
        lambda: (_well_separated(rng, (2, 2, 5, 7)),))
    run("resize_bilinear", lambda x: tc.resize_bilinear(x, 7, 9),
        lambda: (rng.standard_normal((2, 2, 4, 5)),))
    run("resize_nearest", lambda x: tc.resize_nearest(x, 3, 7),
        lambda: (rng.standard_normal((2, 2, 4, 5)),))
    run("decimate_r2", lambda x: tc.downsample_decimate(x, 2),
        lambda: (rng.standard_normal((2, 2, 5, 6)),))
    run("decimate_r3", lambda x: tc.downsample_decimate(x, 3),
        lambda: (rng.standard_normal((1, 3, 7, 9)),))
    run("reduce_sum", lambda x: tc.reduce_sum(x, axes=1), lambda: (rng.standard_normal((3, 4, 2)),))
    run("reduce_sum_all", tc.reduce_sum, lambda: (rng.standard_normal((2, 3)),))
    run("reduce_mean", lambda x: tc.reduce_mean(x, axes=(0, 2)), lambda: (rng.standard_normal((3, 4, 2)),))
    run("global_avg_pool", tc.global_avg_pool, lambda: (rng.standard_normal((2, 3, 4, 5)),))
    run("reduce_max", lambda x: tc.reduce_max(x, axis=1), lambda: (_well_separated(rng, (4, 6)),))
    run("reduce_min", lambda x: tc.reduce_min(x, axis=0), lambda: (_well_separated(rng, (5, 3)),))
    run("concat", lambda a, b: tc.concat((a, b), axis=1),
        lambda: (rng.standard_normal((2, 3)), rng.standard_normal((2, 4))))
    run("reshape", lambda x: tc.reshape(x, (6, 2)), lambda: (rng.standard_normal((3, 4)),))
    return reports


def loss_checks(n_probes: int = 5, tol: float = DEFAULT_TOL, seed: int = 1) -> list[GradCheckReport]:
    rng = np.random.default_rng(seed)
    labels = np.array([1, 1, 2, 2])
    weights = LossWeights()
    reports = []

    def run(name, fn, probe_fn):
        probes = [probe_fn() for _ in range(n_probes)]
        reports.append(grad_check(name, fn, probes, tol=tol, step=FD_STEP, rng=rng))

    run("sr_loss", sr_loss, lambda: _safe_l1_pair(rng, (2, 3, 4, 4)))

    def triplet_fn(*seqs):
        return triplet_bh(_bundle(seqs), labels, weights.margin)

    run("triplet_bh", triplet_fn, lambda: _safe_triplet_seqs(rng, labels, weights.margin))

    run("ce_label_smooth",
        lambda logits: ce_label_smooth(logits, labels, weights.epsilon),
        lambda: (rng.standard_normal((4, 5)),))

    def id_fn(logits, *seqs):
        return id_loss(_bundle(seqs, logits=logits), labels, weights)

    run("id_loss", id_fn,
        lambda: (rng.standard_normal((4, 5)), *_safe_triplet_seqs(rng, labels, weights.margin)))

    def ps_fn(h1, h4, hl, l1, l4, ll):
        bh = _bundle((h1, h1, h1, h4), logits=hl)
        bl = _bundle((l1, l1, l1, l4), logits=ll)
        return ps_loss(bh, bl, ("seq1", "seq4", "seq5", "lc"))

    def ps_probe():
        h1, l1 = _safe_l1_pair(rng, (3, 4))
        h4, l4 = _safe_l1_pair(rng, (3, 2))
        hl, ll = _safe_l1_pair(rng, (3, 5))
        return (h1, h4, hl, l1, l4, ll)

    run("ps_loss", ps_fn, ps_probe)

    def total_fn(logits, l1, l2, l3, l4, restored, target):
        seqs_l = (l1, l2, l3, l4)
        seqs_h = tuple(tc.add(s, 0.5) for s in seqs_l)
        bl = _bundle(seqs_l, logits=logits)
        bh = _bundle(seqs_h, logits=tc.add(logits, 0.5))
        id_term = id_loss(bl, labels, weights)
        sr_term = sr_loss(restored, target)
        ps_term = ps_loss(bh, bl, weights.ps_combination)
        return total_loss(id_term, sr_term, ps_term, weights)

    def total_probe():
        restored, target = _safe_l1_pair(rng, (2, 3, 4, 4))
        seqs = _safe_triplet_seqs(rng, labels, weights.margin)
        return (rng.standard_normal((4, 5)), *seqs, restored, target)

    run("total_loss", total_fn, total_probe)
    return reports


def run_suite(n_probes: int = 5, tol: float = DEFAULT_TOL, seed: int = 0) -> list[GradCheckReport]:
    return op_checks(n_probes, tol, seed) + loss_checks(n_probes, tol, seed + 1)


def format_reports(reports: list[GradCheckReport]) -> str:
    width = max(len(r.op) for r in reports)
    lines = [f"{'op'.ljust(width)}  {'max_rel_err':>12}  {'probes':<22}  status"]
    for r in reports:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{r.op.ljust(width)}  {r.max_rel_error:12.3e}  {r.probe_shape:<22}  {status}")
    return "\n".join(lines)
