"""Synthetic tracking sequences and template/search training pairs."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .head import BoundingBox
from .tracker import crop_search_region, crop_template


@dataclass
class SynthConfig:
    seed: int = 0
    n_frames: int = 40
    frame_size: tuple[int, int] = (240, 192)  # width, height
    target_size: tuple[float, float] = (44.0, 36.0)
    shape: str = "rect"  # or "ellipse"
    speed: float = 2.0  # px/frame scale of the random-walk velocity
    scale_rate: float = 0.01  # std of the per-frame log-scale step
    occluder: bool = False


@dataclass
class Sequence:
    frames: np.ndarray  # T x H x W x 3 uint8
    boxes: np.ndarray  # T x 4 (x, y, w, h)

    def __len__(self) -> int:
        return len(self.frames)

    def box(self, i: int) -> BoundingBox:
        return BoundingBox.from_array(self.boxes[i])


def _background(rng: np.random.Generator, w: int, h: int) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32)
    img = np.empty((h, w, 3), dtype=np.float32)
    for ch in range(3):
        base = 90 + 40 * rng.random()
        acc = base + 25 * (xx / w) * rng.uniform(-1, 1) + 25 * (yy / h) * rng.uniform(-1, 1)
        for _ in range(3):
            fx, fy = rng.uniform(0.01, 0.06, size=2)
            phase = rng.uniform(0, 2 * np.pi)
            acc = acc + 18 * rng.random() * np.sin(fx * xx + fy * yy + phase)
        img[..., ch] = acc
    img += rng.normal(0, 4, size=img.shape)
    return img


def _target_texture(rng: np.random.Generator):
    colors = rng.uniform(0, 255, size=(2, 3))
    colors[0] = np.array([230, 60, 40]) * rng.uniform(0.8, 1.0)
    colors[1] = np.array([40, 70, 220]) * rng.uniform(0.8, 1.0)
    cells = int(rng.integers(3, 5))

    def paint(u: np.ndarray, v: np.ndarray) -> np.ndarray:
        checker = (np.floor(u * cells) + np.floor(v * cells)) % 2
        stripe = 0.15 * np.sin(2 * np.pi * 2 * u)[..., None]
        out = np.where(checker[..., None] > 0, colors[0], colors[1])
        return out * (1.0 + stripe)

    return paint


def synth_sequence(cfg: SynthConfig | None = None) -> Sequence:
    """Render a textured target moving over a structured background.

    Motion is a damped random walk of the centre plus a log-scale random
    walk; the optional occluder is a grey bar sweeping across the frame.
    Deterministic per seed; every box lies inside the frame.
    """
    cfg = cfg or SynthConfig()
    rng = np.random.default_rng(cfg.seed)
    w, h = cfg.frame_size
    bg = _background(rng, w, h)
    paint = _target_texture(rng)
    tw, th = cfg.target_size
    cx, cy = w / 2 + rng.uniform(-0.1, 0.1) * w, h / 2 + rng.uniform(-0.1, 0.1) * h
    vx = vy = 0.0
    log_s = 0.0
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float32) + 0.5
    frames = np.empty((cfg.n_frames, h, w, 3), dtype=np.uint8)
    boxes = np.empty((cfg.n_frames, 4))
    occ_x = -0.2 * w
    for t in range(cfg.n_frames):
        if t > 0:
            vx = 0.85 * vx + rng.normal(0, cfg.speed)
            vy = 0.85 * vy + rng.normal(0, cfg.speed)
            log_s = float(np.clip(log_s + rng.normal(0, cfg.scale_rate), np.log(0.7), np.log(1.4)))
            cx, cy = cx + vx, cy + vy
        bw, bh = tw * np.exp(log_s), th * np.exp(log_s)
        # keep the target inside the frame, bouncing off the borders
        if cx - bw / 2 < 1 or cx + bw / 2 > w - 1:
            vx = -vx
            cx = float(np.clip(cx, bw / 2 + 1, w - bw / 2 - 1))
        if cy - bh / 2 < 1 or cy + bh / 2 > h - 1:
            vy = -vy
            cy = float(np.clip(cy, bh / 2 + 1, h - bh / 2 - 1))
        box = BoundingBox.from_center(cx, cy, bw, bh).clip(w, h)
        u = (xx - box.x) / box.w
        v = (yy - box.y) / box.h
        if cfg.shape == "ellipse":
            inside = (u - 0.5) ** 2 + (v - 0.5) ** 2 <= 0.25
        else:
            inside = (u >= 0) & (u < 1) & (v >= 0) & (v < 1)
        img = bg.copy()
        img[inside] = paint(u[inside], v[inside])
        if cfg.occluder:
            occ_x += w / max(cfg.n_frames - 1, 1) * 1.4
            bar = (xx >= occ_x) & (xx < occ_x + 0.12 * w)
            img[bar] = 128.0
        img += rng.normal(0, 3, size=img.shape)
        frames[t] = np.clip(np.rint(img), 0, 255).astype(np.uint8)
        boxes[t] = box.as_array()
    return Sequence(frames, boxes)


def save_sequence(seq: Sequence, out_dir: str | Path) -> None:
    """Write frames as ``%05d.ppm`` plus ``groundtruth.txt`` (x,y,w,h per line)."""
    from .metrics import save_annotations

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(seq.frames):
        io.write_ppm(out / f"{i:05d}.ppm", frame)
    save_annotations(out / "groundtruth.txt", seq.boxes)


def load_sequence(seq_dir: str | Path) -> Sequence:
    from .metrics import load_annotations

    seq_dir = Path(seq_dir)
    paths = sorted(p for p in seq_dir.iterdir() if p.suffix.lower() in (".ppm", ".png", ".jpg", ".jpeg"))
    if not paths:
        raise FileNotFoundError(f"no frames (.ppm/.png/.jpg) in {seq_dir}")
    frames = np.stack([io.read_image(p) for p in paths])
    gt = seq_dir / "groundtruth.txt"
    boxes = np.asarray(load_annotations(gt)) if gt.exists() else np.zeros((0, 4))
    return Sequence(frames, boxes)


@dataclass
class PairConfig:
    center_jitter: float = 0.5  # max search-centre shift, in units of sqrt(w*h)
    scale_jitter: float = 0.15  # max |log| scale jitter of the search crop
    flip: bool = True
    max_gap: int | None = None  # template/search frame distance; None = anywhere
    template_from_first: bool = False


@dataclass
class TrainingPair:
    template: np.ndarray  # 128 x 128 x 3 uint8
    search: np.ndarray  # 256 x 256 x 3 uint8
    box: np.ndarray  # (x, y, w, h) in the search crop, normalised to [0, 1]


def sample_pair(
    seq: Sequence,
    rng: np.random.Generator,
    cfg: PairConfig | None = None,
    template_side: int = 128,
    search_side: int = 256,
) -> TrainingPair:
    """Template crop at one frame, jittered search crop at another, box in crop coords."""
    cfg = cfg or PairConfig()
    n = len(seq)
    tz = 0 if cfg.template_from_first else int(rng.integers(n))
    if cfg.max_gap is None:
        tx = int(rng.integers(n))
    else:
        tx = int(np.clip(tz + rng.integers(-cfg.max_gap, cfg.max_gap + 1), 0, n - 1))
    template, _ = crop_template(seq.frames[tz], seq.box(tz), template_side)

    gt = seq.box(tx)
    size = np.sqrt(gt.w * gt.h)
    shift = rng.uniform(-cfg.center_jitter, cfg.center_jitter, size=2) * size
    scale = np.exp(rng.uniform(-cfg.scale_jitter, cfg.scale_jitter))
    cx, cy = gt.center
    ref = BoundingBox.from_center(cx + shift[0], cy + shift[1], gt.w * scale, gt.h * scale)
    search, spec = crop_search_region(seq.frames[tx], ref, search_side)
    box = spec.to_crop(gt).as_array() / search_side

    if cfg.flip and rng.random() < 0.5:
        template = template[:, ::-1]
        search = search[:, ::-1]
        box[0] = 1.0 - box[0] - box[2]
    return TrainingPair(np.ascontiguousarray(template), np.ascontiguousarray(search), box)
