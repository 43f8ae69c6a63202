"""Frame-by-frame inference: cropping, windowed decoding and mapping back to the frame."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import FusionVariant
from .autodiff import ContractError, Tensor
from .head import BoundingBox, decode_box
from .model import SMATModel, preprocess

SEARCH_FACTOR = 4.0
TEMPLATE_FACTOR = 2.0


@dataclass
class CropSpec:
    """Square crop of side ``side`` (frame px) centred at ``center``, resized to ``out_side``."""

    center: tuple[float, float]
    side: float
    out_side: int
    fill: np.ndarray

    def __post_init__(self):
        if self.side <= 0:
            raise ContractError(f"crop side must be positive, got {self.side}")

    @property
    def scale(self) -> float:
        """Frame pixels per crop pixel."""
        return self.side / self.out_side

    @property
    def origin(self) -> tuple[float, float]:
        return self.center[0] - self.side / 2, self.center[1] - self.side / 2

    def to_crop(self, box: BoundingBox) -> BoundingBox:
        x0, y0 = self.origin
        s = self.scale
        return BoundingBox((box.x - x0) / s, (box.y - y0) / s, box.w / s, box.h / s)

    def to_frame(self, box: BoundingBox) -> BoundingBox:
        x0, y0 = self.origin
        s = self.scale
        return BoundingBox(box.x * s + x0, box.y * s + y0, box.w * s, box.h * s)


def crop_side(box: BoundingBox, factor: float) -> float:
    """Square context side ``factor * sqrt(w * h)``."""
    return factor * math.sqrt(box.w * box.h)


def crop_and_resize(frame: np.ndarray, center: tuple[float, float], side: float, out_side: int) -> tuple[np.ndarray, CropSpec]:
    """Bilinear square crop; area outside the frame takes the per-channel crop mean."""
    frame = np.asarray(frame)
    h, w = frame.shape[:2]
    x0 = center[0] - side / 2
    y0 = center[1] - side / 2
    # crop window in frame pixels, for the padding colour
    cx0, cy0 = max(int(math.floor(x0)), 0), max(int(math.floor(y0)), 0)
    cx1, cy1 = min(int(math.ceil(x0 + side)), w), min(int(math.ceil(y0 + side)), h)
    region = frame[cy0:cy1, cx0:cx1]
    src = region if region.size else frame
    fill = src.reshape(-1, frame.shape[2]).mean(axis=0)
    spec = CropSpec((float(center[0]), float(center[1])), float(side), out_side, fill)

    padded = np.empty((h + 2, w + 2, frame.shape[2]), dtype=np.float32)
    padded[:] = fill
    padded[1:-1, 1:-1] = frame
    scale = side / out_side
    coords = (np.arange(out_side) + 0.5) * scale - 0.5
    xs = np.clip(x0 + coords, -1.0, w)
    ys = np.clip(y0 + coords, -1.0, h)
    xi = np.floor(xs).astype(int)
    yi = np.floor(ys).astype(int)
    wx = (xs - xi)[None, :, None].astype(np.float32)
    wy = (ys - yi)[:, None, None].astype(np.float32)
    xi0, xi1 = np.clip(xi + 1, 0, w + 1), np.clip(xi + 2, 0, w + 1)
    yi0, yi1 = np.clip(yi + 1, 0, h + 1), np.clip(yi + 2, 0, h + 1)
    top = padded[yi0][:, xi0] * (1 - wx) + padded[yi0][:, xi1] * wx
    bottom = padded[yi1][:, xi0] * (1 - wx) + padded[yi1][:, xi1] * wx
    out = top * (1 - wy) + bottom * wy
    return np.clip(np.rint(out), 0, 255).astype(np.uint8), spec


def crop_search_region(frame: np.ndarray, prev_box: BoundingBox, out_side: int = 256, factor: float = SEARCH_FACTOR):
    if prev_box.w <= 0 or prev_box.h <= 0:
        raise ContractError(f"previous box must have positive size, got {prev_box}")
    return crop_and_resize(frame, prev_box.center, crop_side(prev_box, factor), out_side)


def crop_template(frame: np.ndarray, box: BoundingBox, out_side: int = 128, factor: float = TEMPLATE_FACTOR):
    return crop_and_resize(frame, box.center, crop_side(box, factor), out_side)


def hanning2d(n: int) -> np.ndarray:
    """Outer product of the 1-D Hann window ``0.5 * (1 - cos(2 pi i / (n - 1)))``."""
    if n < 2:
        raise ValueError(f"Hanning window needs n >= 2, got {n}")
    w = 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(n) / (n - 1)))
    return np.outer(w, w)


@dataclass
class TrackerState:
    template: np.ndarray
    template_feat: Tensor | None
    box: BoundingBox
    frame_size: tuple[int, int]
    window: np.ndarray | None
    frame_index: int = 0
    traces: list = field(default_factory=list)


class Tracker:
    """Runs a trained model over a video: the first-frame template is never updated."""

    def __init__(self, model: SMATModel, use_window: bool = True):
        self.model = model
        self.use_window = use_window
        bcfg = model.backbone.cfg
        self.template_side = bcfg.template_side
        self.search_side = bcfg.search_side
        self.map_side = bcfg.search_side // bcfg.total_stride

    def init(self, frame: np.ndarray, box: BoundingBox) -> TrackerState:
        if box.w < 1 or box.h < 1:
            raise ContractError(f"degenerate initial box {box}")
        h, w = frame.shape[:2]
        box = box.clip(w, h)
        template, _ = crop_template(frame, box, self.template_side)
        template.setflags(write=False)
        feat = None
        if self.model.variant is FusionVariant.A:
            with ad.no_grad():
                feat = self.model.encode_template(preprocess(template[None]))
        window = hanning2d(self.map_side) if self.use_window else None
        return TrackerState(template, feat, box, (w, h), window)

    def track_frame(self, state: TrackerState, frame: np.ndarray, capture: bool = False) -> BoundingBox:
        search, spec = crop_search_region(frame, state.box, self.search_side)
        with ad.no_grad():
            if state.template_feat is not None:
                out = self.model(None, preprocess(search[None]), z_feat=state.template_feat, capture=capture)
            else:
                out = self.model(preprocess(state.template[None]), preprocess(search[None]), capture=capture)
        crop_box = decode_box(out.head.sample(0), state.window, self.search_side)
        box = spec.to_frame(crop_box).clip(*state.frame_size)
        state.box = box
        state.frame_index += 1
        state.traces = out.features.traces if capture else []
        return box

    def track(self, frames, init_box: BoundingBox) -> list[BoundingBox]:
        """Boxes for every frame; frame 0 returns the initial box unchanged."""
        frames = iter(frames)
        state = self.init(next(frames), init_box)
        boxes = [init_box]
        for frame in frames:
            boxes.append(self.track_frame(state, frame))
        return boxes
