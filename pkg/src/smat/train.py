"""Desk-scale training loop: pair sampling, target maps, composite loss, AdamW, logging."""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence as Seq

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import PairConfig, Sequence, TrainingPair, sample_pair
from .head import HeadOutput
from .losses import LossBreakdown, LossWeights, focal_loss, giou_loss, gaussian_target_map, l1_loss, target_sigma, total_loss
from .model import ModelConfig, SMATModel, preprocess
from .optim import AdamW, AdamWConfig

log = logging.getLogger(__name__)

LOG_HEADER = ["step", "lr", "L_focal", "L_l1", "L_iou", "L_total"]


class TrainingDiverged(RuntimeError):
    """Raised when a loss component stops being finite."""


@dataclass
class TrainConfig:
    lr: float = 4e-4
    backbone_lr_mult: float = 0.1
    weight_decay: float = 1e-4
    lr_drop_at: float = 0.8  # fraction of epochs after which lr is scaled by lr_drop
    lr_drop: float = 0.1
    epochs: int = 20
    samples_per_epoch: int = 2000
    batch_size: int = 8
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    pairs: PairConfig = field(default_factory=PairConfig)

    def __post_init__(self):
        if self.lr <= 0 or self.weight_decay < 0:
            raise ValueError(f"learning rate must be positive and decay nonnegative: {self.lr}, {self.weight_decay}")
        if not 0 < self.backbone_lr_mult <= 1:
            raise ValueError(f"backbone lr multiplier must lie in (0, 1], got {self.backbone_lr_mult}")
        if self.epochs < 1 or self.batch_size < 1 or self.samples_per_epoch < 1:
            raise ValueError("epochs, batch size and samples per epoch must be positive")

    @property
    def steps_per_epoch(self) -> int:
        return max(1, self.samples_per_epoch // self.batch_size)

    @property
    def total_steps(self) -> int:
        return self.epochs * self.steps_per_epoch

    def schedule_scale(self, epoch: float) -> float:
        """LR factor at a (possibly fractional) epoch."""
        return self.lr_drop if epoch >= self.lr_drop_at * self.epochs else 1.0


@dataclass
class Targets:
    score: np.ndarray  # B x S x S gaussian maps
    cells: np.ndarray  # B x 2 (row, col) of the groundtruth centre cell
    boxes: np.ndarray  # B x 4 normalised xywh


def build_targets(boxes: np.ndarray, map_side: int) -> Targets:
    """Score maps and centre cells for normalised ``xywh`` boxes in the search crop."""
    boxes = np.atleast_2d(np.asarray(boxes, dtype=np.float64))
    cx = boxes[:, 0] + boxes[:, 2] / 2
    cy = boxes[:, 1] + boxes[:, 3] / 2
    cols = np.clip(np.floor(cx * map_side), 0, map_side - 1).astype(int)
    rows = np.clip(np.floor(cy * map_side), 0, map_side - 1).astype(int)
    maps = np.stack([
        gaussian_target_map((r, c), map_side, target_sigma(min(b[2], b[3]) * map_side))
        for r, c, b in zip(rows, cols, boxes)
    ])
    return Targets(maps, np.stack([rows, cols], axis=1), boxes)


def boxes_at_cells(out: HeadOutput, cells: np.ndarray) -> Tensor:
    """Decoded normalised ``xywh`` boxes at the given cells, kept in the graph."""
    side = out.score.shape[-1]
    b = np.arange(len(cells))
    r, c = cells[:, 0], cells[:, 1]
    off = out.offset[b, r, c]  # B x 2
    size = out.size[b, r, c]
    base = Tensor(np.stack([c, r], axis=1).astype(off.dtype))
    center = (base + off) / float(side)
    return ad.concat([center - size / 2.0, size], axis=-1)


def compute_loss(model: SMATModel, batch: Seq[TrainingPair], weights: LossWeights | None = None) -> tuple[Tensor, LossBreakdown]:
    z = preprocess(np.stack([p.template for p in batch]))
    x = preprocess(np.stack([p.search for p in batch]))
    if model.dtype != np.float32:
        z, x = Tensor(z.data.astype(model.dtype)), Tensor(x.data.astype(model.dtype))
    out = model(z, x).head
    tg = build_targets(np.stack([p.box for p in batch]), out.score.shape[-1])
    focal = focal_loss(out.score, tg.score)
    pred = boxes_at_cells(out, tg.cells)
    gt = Tensor(tg.boxes.astype(pred.dtype))
    return total_loss(focal, l1_loss(pred, gt), giou_loss(pred, gt), weights)


@dataclass
class StepRecord:
    step: int
    lr: float
    loss: LossBreakdown

    def row(self) -> list:
        b = self.loss
        # repr keeps every bit, so the logged columns reproduce the decomposition exactly
        return [self.step, repr(self.lr), repr(b.focal), repr(b.l1), repr(b.iou), repr(b.total)]


@dataclass
class TrainResult:
    model: SMATModel
    history: list[StepRecord]
    seconds: float

    @property
    def losses(self) -> np.ndarray:
        return np.array([h.loss.total for h in self.history])


class PairSource:
    """Endless template/search pairs from a set of sequences (or a fixed pair list)."""

    def __init__(self, data, cfg: PairConfig, rng: np.random.Generator, template_side=128, search_side=256):
        if isinstance(data, Sequence):
            data = [data]
        data = list(data)
        if not data:
            raise ValueError("training data is empty")
        self.fixed = isinstance(data[0], TrainingPair)
        self.data = data
        self.cfg = cfg
        self.rng = rng
        self.sides = (template_side, search_side)
        self._i = 0

    def next(self) -> TrainingPair:
        if self.fixed:
            pair = self.data[self._i % len(self.data)]
            self._i += 1
            return pair
        seq = self.data[int(self.rng.integers(len(self.data)))]
        return sample_pair(seq, self.rng, self.cfg, *self.sides)

    def batch(self, n: int) -> list[TrainingPair]:
        return [self.next() for _ in range(n)]


def train(
    cfg: TrainConfig,
    data,
    model: SMATModel | ModelConfig | None = None,
    out_dir: str | Path | None = None,
    max_steps: int | None = None,
    time_budget: float | None = None,
    callback: Callable[[StepRecord], None] | None = None,
) -> TrainResult:
    """Optimise the composite loss on pairs drawn from ``data``.

    Args:
        cfg: schedule and optimiser settings.
        data: a ``Sequence``, a list of them, or a list of fixed ``TrainingPair``.
        model: model (or config to build one); defaults to ``ModelConfig(seed=cfg.seed)``.
        out_dir: when given, receives ``loss.csv``, ``model.bin`` and ``model.cfg``.
        max_steps: stop early after this many steps.
        time_budget: stop early after this many seconds (checked between steps).
        callback: called with every step record.

    Raises:
        TrainingDiverged: a loss component became NaN or infinite.
    """
    if model is None or isinstance(model, ModelConfig):
        model = SMATModel(model or ModelConfig(seed=cfg.seed))
    bcfg = model.backbone.cfg
    rng = np.random.default_rng(cfg.seed)
    source = PairSource(data, cfg.pairs, rng, bcfg.template_side, bcfg.search_side)
    opt = AdamW(
        model.param_groups(),
        AdamWConfig(lr=cfg.lr, weight_decay=cfg.weight_decay),
        {"backbone": cfg.backbone_lr_mult, "head": 1.0},
    )
    out = Path(out_dir) if out_dir is not None else None
    writer = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        fh = open(out / "loss.csv", "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(LOG_HEADER)

    history: list[StepRecord] = []
    total = cfg.total_steps if max_steps is None else min(max_steps, cfg.total_steps)
    start = time.monotonic()
    try:
        for step in range(1, total + 1):
            epoch = (step - 1) / cfg.steps_per_epoch
            opt.schedule_scale = cfg.schedule_scale(epoch)
            opt.zero_grad()
            try:
                loss, parts = compute_loss(model, source.batch(cfg.batch_size), cfg.weights)
            except ad.ContractError as exc:
                raise TrainingDiverged(f"step {step}: {exc}") from exc
            if not math.isfinite(parts.total):
                raise TrainingDiverged(f"step {step}: total loss is {parts.total} ({parts})")
            ad.backward(loss)
            opt.step()
            rec = StepRecord(step, opt.group_lr("head"), parts)
            history.append(rec)
            if writer is not None:
                writer.writerow(rec.row())
            if callback is not None:
                callback(rec)
            if step % 50 == 0:
                log.info("step %d lr %.2e loss %.4f", step, rec.lr, parts.total)
            if time_budget is not None and time.monotonic() - start > time_budget:
                log.info("time budget reached after %d steps", step)
                break
    finally:
        if writer is not None:
            fh.close()
    if out is not None:
        model.save(out / "model.bin")
    return TrainResult(model, history, time.monotonic() - start)


def read_loss_log(path: str | Path) -> list[dict[str, float]]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [{k: float(v) for k, v in row.items()} for row in rows]
