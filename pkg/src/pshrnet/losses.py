"""Training objectives: batch-hard triplet, label-smoothed cross-entropy,
the weighted identity loss, the pseudo-siamese alignment loss, and the
joint total. All losses are plain sums over the batch; an optional flag
divides by the batch size for learning-rate transfer at other batch
geometries.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from pshrnet import tensor as tc
from pshrnet.reid import PS_ELEMENT_NAMES, SequenceBundle
from pshrnet.tensor import ContractError, Tensor

_FAR = 1e9  # masks non-candidates out of hardest-negative minima


@dataclass
class LossWeights:
    margin: float = 0.1
    epsilon: float = 0.1
    lambda_ce: float = 1.15
    lambda_bh: float = 0.2
    lambda_sr: float = 0.5
    lambda_ps: float = 0.5
    ps_combination: tuple[str, ...] = ("seq1", "seq4", "seq5", "lc")
    normalize_by_batch: bool = False

    def __post_init__(self):
        self.ps_combination = tuple(self.ps_combination)
        if self.margin < 0:
            raise ContractError(f"margin must be >= 0, got {self.margin}")
        if not 0 <= self.epsilon < 1:
            raise ContractError(f"smoothing must lie in [0, 1), got {self.epsilon}")
        for name in ("lambda_ce", "lambda_bh", "lambda_sr", "lambda_ps"):
            if getattr(self, name) < 0:
                raise ContractError(f"{name} must be >= 0")
        if not self.ps_combination:
            raise ContractError("pseudo-siamese combination must be nonempty")
        bad = [n for n in self.ps_combination if n not in PS_ELEMENT_NAMES]
        if bad:
            raise ContractError(f"unknown combination elements {bad}; choose from {PS_ELEMENT_NAMES}")


def _check_pk(labels: np.ndarray) -> tuple[int, int]:
    ids, counts = np.unique(labels, return_counts=True)
    if len(ids) < 2:
        raise ContractError("batch-hard triplet needs at least 2 identities")
    if counts.min() < 2:
        raise ContractError("batch-hard triplet needs at least 2 instances per identity")
    if counts.min() != counts.max():
        raise ContractError(f"batch is not P x K structured: instance counts {counts.tolist()}")
    return len(ids), int(counts[0])


def _pairwise_l2(x: Tensor) -> Tensor:
    sq = tc.reduce_sum(tc.mul(x, x), axes=1, keepdims=True)
    cross = tc.matmul(x, tc.transpose2d(x))
    d2 = tc.relu(tc.sub(tc.add(sq, tc.transpose2d(sq)), tc.scalar_mul(cross, 2.0)))
    return tc.sqrt(d2)


def triplet_bh(bundle: SequenceBundle, labels, margin: float,
               normalize_by_batch: bool = False) -> Tensor:
    """Batch-hard triplet over all five sequences.

    Per anchor and per sequence: hinge at ``margin`` between the farthest
    same-identity distance and the nearest cross-identity distance, summed
    over the batch.
    """
    labels = np.asarray(labels)
    batch = bundle.batch_size
    if labels.shape != (batch,):
        raise ContractError(f"expected {batch} labels, got shape {labels.shape}")
    _check_pk(labels)
    pos = Tensor((labels[:, None] == labels[None, :]).astype(np.float64))
    neg = Tensor(1.0 - pos.data)

    total = None
    for x in (*bundle.seqs, bundle.seq5):
        d = _pairwise_l2(x)
        hardest_pos = tc.reduce_max(tc.mul(d, pos), axis=1)
        masked = tc.sub(tc.mul(tc.scalar_mul(d, -1.0), neg), tc.scalar_mul(pos, _FAR))
        hardest_neg = tc.scalar_mul(tc.reduce_max(masked, axis=1), -1.0)
        hinge = tc.relu(tc.add(tc.sub(hardest_pos, hardest_neg), float(margin)))
        term = tc.reduce_sum(hinge)
        total = term if total is None else tc.add(total, term)
    if normalize_by_batch:
        total = tc.scalar_mul(total, 1.0 / batch)
    return total


def ce_label_smooth(logits: Tensor, labels, epsilon: float,
                    normalize_by_batch: bool = False) -> Tensor:
    """Label-smoothed cross-entropy summed over the batch.

    The smoothed target puts 1 - (M-1)/M * epsilon on the true class and
    epsilon/M elsewhere (rows sum to one). Log-probabilities come from a
    max-shifted log-softmax for stability. Labels are 1-based.
    """
    if logits.ndim != 2:
        raise ContractError(f"logits must be (batch, classes), got {logits.shape}")
    batch, m = logits.shape
    labels = np.asarray(labels)
    if labels.shape != (batch,):
        raise ContractError(f"expected {batch} labels, got shape {labels.shape}")
    if labels.min() < 1 or labels.max() > m:
        raise ContractError(f"labels must lie in 1..{m}, got range "
                            f"[{labels.min()}, {labels.max()}]")
    q = np.full((batch, m), epsilon / m)
    q[np.arange(batch), labels - 1] = 1.0 - (m - 1) / m * epsilon

    shifted = tc.sub(logits, tc.reduce_max(logits, axis=1, keepdims=True))
    log_norm = tc.log(tc.reduce_sum(tc.exp(shifted), axes=1, keepdims=True))
    log_p = tc.sub(shifted, log_norm)
    loss = tc.scalar_mul(tc.reduce_sum(tc.mul(log_p, Tensor(q))), -1.0)
    if normalize_by_batch:
        loss = tc.scalar_mul(loss, 1.0 / batch)
    return loss


def id_loss(bundle: SequenceBundle, labels, weights: LossWeights) -> Tensor:
    """Weighted sum of classification and metric terms."""
    ce = ce_label_smooth(bundle.logits, labels, weights.epsilon, weights.normalize_by_batch)
    bh = triplet_bh(bundle, labels, weights.margin, weights.normalize_by_batch)
    return tc.add(tc.scalar_mul(ce, weights.lambda_ce), tc.scalar_mul(bh, weights.lambda_bh))


def ps_loss(bundle_h: SequenceBundle, bundle_l: SequenceBundle, combination) -> Tensor:
    """L1 alignment between the two branches over the chosen bundle elements."""
    combination = tuple(combination)
    if not combination:
        raise ContractError("pseudo-siamese combination must be nonempty")
    total = None
    for name in combination:
        a = bundle_h.element(name)
        b = bundle_l.element(name)
        if a.shape != b.shape:
            raise ContractError(
                f"branch element {name!r} dimensions differ: {a.shape} vs {b.shape}")
        term = tc.reduce_sum(tc.absolute(tc.sub(a, b)))
        total = term if total is None else tc.add(total, term)
    return total


def total_loss(id_term: Tensor, sr_term: Tensor, ps_term: Tensor,
               weights: LossWeights) -> Tensor:
    """Joint objective: identity + weighted restoration + weighted alignment."""
    return tc.add(id_term, tc.add(tc.scalar_mul(sr_term, weights.lambda_sr),
                                  tc.scalar_mul(ps_term, weights.lambda_ps)))
