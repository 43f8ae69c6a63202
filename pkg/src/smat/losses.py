"""Training objectives: weighted focal loss on the score map, l1 and GIoU on boxes."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, Tensor

PROB_EPS = 1e-6


@dataclass
class LossWeights:
    l1: float = 5.0
    iou: float = 2.0

    def __post_init__(self):
        if self.l1 < 0 or self.iou < 0:
            raise ValueError(f"loss weights must be nonnegative, got {self}")


@dataclass
class LossBreakdown:
    focal: float
    l1: float
    iou: float
    total: float


def gaussian_target_map(center_cell: tuple[int, int], map_side: int, sigma: float) -> np.ndarray:
    """``exp(-((r - r0)^2 + (c - c0)^2) / (2 sigma^2))``; exactly one cell equals 1."""
    r0, c0 = center_cell
    if not (0 <= r0 < map_side and 0 <= c0 < map_side):
        raise ContractError(f"center cell {center_cell} outside a {map_side}x{map_side} map")
    rr, cc = np.mgrid[0:map_side, 0:map_side]
    d2 = (rr - r0) ** 2 + (cc - c0) ** 2
    if sigma <= 0:
        return (d2 == 0).astype(np.float64)
    return np.exp(-d2 / (2.0 * sigma**2))


def target_sigma(box_extent_cells: float) -> float:
    """Gaussian radius for a box whose smaller side spans ``box_extent_cells`` cells."""
    return max(box_extent_cells / 6.0, 0.5)


def focal_loss(pred, target, alpha: float = 2.0, beta: float = 4.0) -> Tensor:
    """Penalty-reduced focal loss, normalised by the number of positive cells.

    Positives are cells with ``target == 1``; every other cell is a negative
    down-weighted by ``(1 - target)^beta``. Predictions are clamped to
    ``[1e-6, 1 - 1e-6]``.
    """
    pred = ad.as_tensor(pred)
    y = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=pred.dtype)
    if y.shape != pred.shape:
        raise ContractError(f"focal_loss shape mismatch: {pred.shape} vs {y.shape}")
    pos = (y == 1).astype(pred.dtype)
    neg_weight = (1.0 - pos) * (1.0 - y) ** beta
    r = ad.clip(pred, PROB_EPS, 1.0 - PROB_EPS)
    one_minus = 1.0 - r
    pos_term = (one_minus**alpha) * ad.log(r) * pos
    neg_term = (r**alpha) * ad.log(one_minus) * neg_weight
    n_pos = max(float(pos.sum()), 1.0)
    return -(pos_term.sum() + neg_term.sum()) / n_pos


def _boxes(b) -> Tensor:
    if isinstance(b, Tensor):
        return b
    if hasattr(b, "as_array"):
        return Tensor(b.as_array())
    if isinstance(b, (list, tuple)) and b and hasattr(b[0], "as_array"):
        return Tensor(np.stack([x.as_array() for x in b]))
    return Tensor(np.asarray(b, dtype=np.float64))


def l1_loss(pred, gt) -> Tensor:
    """Mean absolute difference over the (x, y, w, h) coordinates."""
    pred, gt = _boxes(pred), _boxes(gt)
    return ad.abs_(pred - gt).mean()


def giou(pred, gt) -> Tensor:
    """Generalised IoU of ``[..., 4]`` xywh boxes: ``IoU - |E \\ U| / |E|``."""
    pred, gt = _boxes(pred), _boxes(gt)
    for name, b in (("pred", pred), ("gt", gt)):
        if np.any(b.data[..., 2:] <= 0):
            raise ContractError(f"{name} box has zero or negative area")
    px, py, pw, ph = (pred[..., i] for i in range(4))
    gx, gy, gw, gh = (gt[..., i] for i in range(4))
    px2, py2, gx2, gy2 = px + pw, py + ph, gx + gw, gy + gh
    iw = ad.relu(ad.minimum(px2, gx2) - ad.maximum(px, gx))
    ih = ad.relu(ad.minimum(py2, gy2) - ad.maximum(py, gy))
    inter = iw * ih
    union = pw * ph + gw * gh - inter
    enclose = (ad.maximum(px2, gx2) - ad.minimum(px, gx)) * (ad.maximum(py2, gy2) - ad.minimum(py, gy))
    return inter / union - (enclose - union) / enclose


def giou_loss(pred, gt) -> Tensor:
    """Mean of ``1 - GIoU``."""
    return (1.0 - giou(pred, gt)).mean()


def total_loss(focal, l1, iou, weights: LossWeights | None = None) -> tuple[Tensor, LossBreakdown]:
    """``focal + w.l1 * l1 + w.iou * iou``; returns the tensor and a float breakdown."""
    w = weights or LossWeights()
    focal, l1, iou = ad.as_tensor(focal), ad.as_tensor(l1), ad.as_tensor(iou)
    total = focal + l1 * w.l1 + iou * w.iou
    for name, t in (("focal", focal), ("l1", l1), ("iou", iou)):
        if not np.isfinite(t.data).all():
            raise ContractError(f"non-finite {name} loss component")
    f, l, i = focal.item(), l1.item(), iou.item()
    # the logged total is rebuilt from the logged parts so the decomposition is exact
    return total, LossBreakdown(f, l, i, f + w.l1 * l + w.iou * i)
