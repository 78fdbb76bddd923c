"""Two-phase training: the high-resolution branch alone first, then the
joint restoration + low-resolution branch under pseudo-siamese guidance.

Phase 1 trains the HR-branch re-ID net on HR batches with the identity
loss. Phase 2 initializes the LR branch from the phase-1 weights, restores
the LR member of each pair, and steps on the joint total loss; the HR
branch is frozen by default so the alignment target stays stationary (a
config flag trains both branches simultaneously).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from pshrnet.backbone import BackboneConfig
from pshrnet.checkpoint import load_into
from pshrnet.data import SampleRecord, pk_sampler
from pshrnet.losses import LossWeights, id_loss, ps_loss, total_loss
from pshrnet.reid import HeadConfig, ReidNet
from pshrnet.sr import SrConfig, SuperResolver, sr_loss
from pshrnet.tensor import ContractError, Tensor

LOSS_CURVE_HEADER = ["epoch", "phase", "L_ID", "L_SR", "L_PS", "L_TOTAL"]


@dataclass
class SgdConfig:
    lr: float
    weight_decay: float = 5e-4
    momentum: float = 0.9
    decay_factor: float = 0.1
    decay_interval: int = 30

    def __post_init__(self):
        if self.lr <= 0:
            raise ContractError(f"learning rate must be positive, got {self.lr}")
        if not 0 < self.decay_factor <= 1:
            raise ContractError(f"decay factor must lie in (0, 1], got {self.decay_factor}")
        if self.decay_interval < 1:
            raise ContractError("decay interval must be >= 1")


class SgdOptimizer:
    """Classical momentum SGD; weight decay is added onto the gradient."""

    def __init__(self, params: dict[str, Tensor], cfg: SgdConfig):
        self.params = dict(params)
        self.cfg = cfg
        self.lr = cfg.lr
        self._momentum = {name: np.zeros_like(p.data) for name, p in self.params.items()}

    def set_epoch(self, epoch: int):
        """Step-decay schedule: lr multiplies by the factor every interval."""
        self.lr = self.cfg.lr * self.cfg.decay_factor ** (epoch // self.cfg.decay_interval)

    def zero_grad(self):
        for p in self.params.values():
            p.zero_grad()

    def step(self):
        for name, p in self.params.items():
            if p.grad is None:
                raise ContractError(f"parameter {name} has no gradient; call zero_grad "
                                    "before the forward pass")
            g = p.grad
            if self.cfg.weight_decay:
                g = g + self.cfg.weight_decay * p.data
            buf = self._momentum[name]
            buf *= self.cfg.momentum
            buf += g
            p.data -= self.lr * buf


@dataclass
class TrainRunConfig:
    epochs_phase1: int = 30
    epochs_phase2: int = 30
    p: int = 4
    k: int = 6
    seed: int = 7
    backbone_lr: float = 1e-2
    sr_lr: float = 1e-3
    weight_decay: float = 5e-4
    momentum: float = 0.9
    lr_decay_factor: float = 0.1
    lr_decay_interval: int = 30
    freeze_high_branch: bool = True
    id_branch: str = "low"   # "high" routes restored images through the HR branch for L_ID
    augment: bool = True
    checkpoint_every: int = 0
    passes_phase1: int = 4   # identity sweeps per epoch
    passes_phase2: int = 1

    def __post_init__(self):
        if self.epochs_phase1 < 1 or self.epochs_phase2 < 1:
            raise ContractError("both phases need at least one epoch")
        if self.p < 2 or self.k < 2:
            raise ContractError("P and K must both be >= 2")
        if self.id_branch not in ("low", "high"):
            raise ContractError(f"id_branch must be 'low' or 'high', got {self.id_branch!r}")
        if self.passes_phase1 < 1 or self.passes_phase2 < 1:
            raise ContractError("passes per epoch must be >= 1")

    def sgd(self, lr: float) -> SgdConfig:
        return SgdConfig(lr=lr, weight_decay=self.weight_decay, momentum=self.momentum,
                         decay_factor=self.lr_decay_factor, decay_interval=self.lr_decay_interval)


def _hr_train_records(records: list[SampleRecord]) -> list[SampleRecord]:
    out = [r for r in records if r.split == "train" and r.res_tag == "HR"]
    if not out:
        raise ContractError("no HR training records available")
    return out


def _freeze(params: dict[str, Tensor]):
    for p in params.values():
        p.requires_grad = False


def train_phase1(run: TrainRunConfig, weights: LossWeights,
                 backbone_cfg: BackboneConfig, head_cfg: HeadConfig,
                 records: list[SampleRecord],
                 checkpoint_sink=None) -> tuple[ReidNet, list[tuple]]:
    """Train the HR-branch net on HR batches with the identity loss."""
    train_records = _hr_train_records(records)
    rng = np.random.default_rng([run.seed, 10])
    net = ReidNet(rng, backbone_cfg, head_cfg)
    opt = SgdOptimizer(net.named_params(), run.sgd(run.backbone_lr))
    rows = []
    for epoch in range(run.epochs_phase1):
        opt.set_epoch(epoch)
        sums = np.zeros(2)
        n_batches = 0
        for batch in pk_sampler(train_records, run.p, run.k, [run.seed, 11, epoch],
                                augment_images=run.augment, passes=run.passes_phase1):
            bundle = net(Tensor(batch.hr))
            loss = id_loss(bundle, batch.labels, weights)
            opt.zero_grad()
            loss.backward(free_graph=True)
            opt.step()
            sums += (loss.item(), loss.item())
            n_batches += 1
        lid, ltot = sums / n_batches
        rows.append((epoch, 1, lid, 0.0, 0.0, ltot))
        if checkpoint_sink and run.checkpoint_every and (epoch + 1) % run.checkpoint_every == 0:
            checkpoint_sink(epoch, net.named_params())
    return net, rows


def train_phase2(run: TrainRunConfig, weights: LossWeights,
                 backbone_cfg: BackboneConfig, head_cfg: HeadConfig, sr_cfg: SrConfig,
                 phase1_params: dict[str, np.ndarray],
                 records: list[SampleRecord],
                 checkpoint_sink=None) -> tuple[SuperResolver, ReidNet, ReidNet, list[tuple]]:
    """Joint phase: restore LR members, align the two branches, step on the
    total loss. Returns (restorer, low branch, high branch, loss rows)."""
    train_records = _hr_train_records(records)
    rng = np.random.default_rng([run.seed, 20])
    restorer = SuperResolver(rng, sr_cfg)
    net_h = ReidNet(rng, backbone_cfg, head_cfg)
    net_l = ReidNet(rng, backbone_cfg, head_cfg)
    load_into(net_h.named_params(), phase1_params)
    load_into(net_l.named_params(), phase1_params)
    if run.freeze_high_branch:
        _freeze(net_h.named_params())

    reid_params = dict(net_l.named_params("reid_l"))
    if not run.freeze_high_branch:
        reid_params.update(net_h.named_params("reid_h"))
    opt_reid = SgdOptimizer(reid_params, run.sgd(run.backbone_lr))
    opt_sr = SgdOptimizer(restorer.named_params("sr"), run.sgd(run.sr_lr))

    rows = []
    for epoch in range(run.epochs_phase2):
        opt_reid.set_epoch(epoch)
        opt_sr.set_epoch(epoch)
        sums = np.zeros(4)
        n_batches = 0
        for batch in pk_sampler(train_records, run.p, run.k, [run.seed, 21, epoch],
                                augment_images=run.augment, upsample=sr_cfg.upsample,
                                passes=run.passes_phase2):
            hr = Tensor(batch.hr)
            restored = restorer(Tensor(batch.lr_up))
            bundle_l = net_l(restored)
            bundle_h = net_h(hr)
            if run.id_branch == "low":
                id_term = id_loss(bundle_l, batch.labels, weights)
            else:
                id_term = id_loss(net_h(restored), batch.labels, weights)
            sr_term = sr_loss(restored, hr)
            ps_term = ps_loss(bundle_h, bundle_l, weights.ps_combination)
            loss = total_loss(id_term, sr_term, ps_term, weights)
            opt_reid.zero_grad()
            opt_sr.zero_grad()
            loss.backward(free_graph=True)
            opt_reid.step()
            opt_sr.step()
            sums += (id_term.item(), sr_term.item(), ps_term.item(), loss.item())
            n_batches += 1
        lid, lsr, lps, ltot = sums / n_batches
        rows.append((epoch, 2, lid, lsr, lps, ltot))
        if checkpoint_sink and run.checkpoint_every and (epoch + 1) % run.checkpoint_every == 0:
            checkpoint_sink(epoch, phase2_params(restorer, net_l))
    return restorer, net_l, net_h, rows


def phase2_params(restorer: SuperResolver, net_l: ReidNet) -> dict[str, Tensor]:
    """The deliverable of phase 2: restorer plus the low-resolution branch."""
    return {**restorer.named_params("sr"), **net_l.named_params("reid_l")}


def write_loss_curve(path: Path, rows: list[tuple]):
    """CSV with one row per epoch per phase."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LOSS_CURVE_HEADER)
    for epoch, phase, lid, lsr, lps, ltot in rows:
        writer.writerow([epoch, phase, f"{lid:.10g}", f"{lsr:.10g}",
                         f"{lps:.10g}", f"{ltot:.10g}"])
    path.write_text(buf.getvalue(), encoding="utf-8")
