"""Tracking benchmark metrics and ``x,y,w,h`` annotation files."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import ContractError

AUC_THRESHOLDS = np.linspace(0.0, 1.0, 101)
PRECISION_PX = 20.0
NORM_PRECISION = 0.2


class AnnotationError(ValueError):
    """Malformed annotation file."""


def _as_boxes(boxes) -> np.ndarray:
    if hasattr(boxes, "as_array"):
        return boxes.as_array()[None]
    arr = np.asarray([b.as_array() if hasattr(b, "as_array") else b for b in boxes], dtype=np.float64)
    return arr.reshape(-1, 4)


def iou_array(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise IoU of ``[n, 4]`` xywh arrays."""
    if np.any(a[:, 2:] <= 0) or np.any(b[:, 2:] <= 0):
        raise ContractError("IoU needs boxes with positive width and height")
    iw = np.clip(np.minimum(a[:, 0] + a[:, 2], b[:, 0] + b[:, 2]) - np.maximum(a[:, 0], b[:, 0]), 0, None)
    ih = np.clip(np.minimum(a[:, 1] + a[:, 3], b[:, 1] + b[:, 3]) - np.maximum(a[:, 1], b[:, 1]), 0, None)
    inter = iw * ih
    union = a[:, 2] * a[:, 3] + b[:, 2] * b[:, 3] - inter
    return inter / union


def iou(a, b) -> float:
    return float(iou_array(_as_boxes(a), _as_boxes(b))[0])


@dataclass
class TrackMetrics:
    ao: float
    sr050: float
    sr075: float
    auc: float
    p: float
    p_norm: float
    per_video: dict[str, dict[str, float]] = field(default_factory=dict)

    @property
    def op50(self) -> float:
        return self.sr050

    @property
    def op75(self) -> float:
        return self.sr075

    def to_dict(self) -> dict:
        return {
            "ao": self.ao,
            "sr050": self.sr050,
            "sr075": self.sr075,
            "auc": self.auc,
            "p": self.p,
            "p_norm": self.p_norm,
            "op50": self.op50,
            "op75": self.op75,
            "per_video": self.per_video,
        }


def _clip_to_frame(boxes: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    w, h = size
    x0 = np.clip(boxes[:, 0], 0, w)
    y0 = np.clip(boxes[:, 1], 0, h)
    x1 = np.clip(boxes[:, 0] + boxes[:, 2], 0, w)
    y1 = np.clip(boxes[:, 1] + boxes[:, 3], 0, h)
    out = np.stack([x0, y0, np.maximum(x1 - x0, 1e-6), np.maximum(y1 - y0, 1e-6)], axis=1)
    return out


def video_metrics(pred: np.ndarray, gt: np.ndarray) -> dict[str, float]:
    """Per-frame scores of one video; success counts frames with IoU >= threshold."""
    ious = iou_array(pred, gt)
    pc = pred[:, :2] + pred[:, 2:] / 2
    gc = gt[:, :2] + gt[:, 2:] / 2
    dist = np.linalg.norm(pc - gc, axis=1)
    norm_dist = np.linalg.norm((pc - gc) / gt[:, 2:], axis=1)
    success = (ious[:, None] >= AUC_THRESHOLDS[None, :]).mean(axis=0)
    return {
        "ao": float(ious.mean()),
        "sr050": float((ious >= 0.5).mean()),
        "sr075": float((ious >= 0.75).mean()),
        "auc": float(success.mean()),
        "p": float((dist <= PRECISION_PX).mean()),
        "p_norm": float((norm_dist <= NORM_PRECISION).mean()),
    }


def compute_metrics(
    pred: Mapping[str, Sequence] | Sequence[Sequence],
    gt: Mapping[str, Sequence] | Sequence[Sequence],
    frame_sizes: Mapping[str, tuple[int, int]] | Sequence[tuple[int, int]] | None = None,
) -> TrackMetrics:
    """Benchmark metrics averaged uniformly over videos.

    ``pred`` and ``gt`` map video names (or positions) to per-frame boxes.
    With ``frame_sizes`` (width, height) predictions are clipped to the frame.
    """
    if not isinstance(pred, Mapping):
        pred = {str(i): v for i, v in enumerate(pred)}
    if not isinstance(gt, Mapping):
        gt = {str(i): v for i, v in enumerate(gt)}
    if frame_sizes is not None and not isinstance(frame_sizes, Mapping):
        frame_sizes = {str(i): v for i, v in enumerate(frame_sizes)}
    if set(pred) != set(gt):
        raise ContractError(f"prediction videos {sorted(pred)} != groundtruth videos {sorted(gt)}")
    if not pred:
        raise ContractError("no videos to evaluate")
    per_video = {}
    for name in sorted(gt):
        p, g = _as_boxes(pred[name]), _as_boxes(gt[name])
        if len(p) != len(g):
            raise ContractError(f"video {name}: {len(p)} predictions for {len(g)} groundtruth frames")
        if frame_sizes is not None:
            p = _clip_to_frame(p, frame_sizes[name])
        per_video[name] = video_metrics(p, g)
    keys = ("ao", "sr050", "sr075", "auc", "p", "p_norm")
    avg = {k: float(np.mean([v[k] for v in per_video.values()])) for k in keys}
    return TrackMetrics(**avg, per_video=per_video)


def load_annotations(path: str | Path) -> list[tuple[float, float, float, float]]:
    """Read one ``x,y,w,h`` line per frame (commas, tabs or spaces accepted)."""
    path = Path(path)
    boxes = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.replace("\t", ",").replace(" ", ",").split(",")
        parts = [p for p in parts if p]
        try:
            values = tuple(float(p) for p in parts)
        except ValueError:
            raise AnnotationError(f"{path}: line {lineno}: not numeric: {line!r}") from None
        if len(values) != 4:
            raise AnnotationError(f"{path}: line {lineno}: expected 4 values, got {len(values)}")
        boxes.append(values)
    if not boxes:
        raise AnnotationError(f"{path}: empty annotation file")
    return boxes


def _fmt(v: float) -> str:
    return str(int(v)) if v.is_integer() else repr(v)


def save_annotations(path: str | Path, boxes) -> None:
    """Write one ``x,y,w,h`` line per box; values use the shortest exact float form."""
    lines = [",".join(_fmt(float(v)) for v in row) for row in _as_boxes(boxes)]
    Path(path).write_text("\n".join(lines) + "\n")
