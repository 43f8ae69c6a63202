"""Pixel-wise cross-correlation fusion, the two-branch prediction head and box decoding."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .attention import SeparableAttention
from .autodiff import ContractError, ShapeError, Tensor
from .backbone import tokenize, untokenize
from .nn import Conv2d, Module, make_rng


@dataclass
class BoundingBox:
    """Axis-aligned box, top-left corner plus size, in pixels."""

    x: float
    y: float
    w: float
    h: float

    @classmethod
    def from_center(cls, cx: float, cy: float, w: float, h: float) -> "BoundingBox":
        return cls(cx - w / 2, cy - h / 2, w, h)

    @classmethod
    def from_array(cls, arr) -> "BoundingBox":
        x, y, w, h = (float(v) for v in arr)
        return cls(x, y, w, h)

    @property
    def center(self) -> tuple[float, float]:
        return self.x + self.w / 2, self.y + self.h / 2

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.w, self.h], dtype=np.float64)

    def clip(self, width: float, height: float) -> "BoundingBox":
        """Intersect with the ``width x height`` frame, keeping at least 1px extent."""
        x0 = min(max(self.x, 0.0), width - 1.0)
        y0 = min(max(self.y, 0.0), height - 1.0)
        x1 = min(max(self.x + self.w, x0 + 1.0), width)
        y1 = min(max(self.y + self.h, y0 + 1.0), height)
        return BoundingBox(x0, y0, x1 - x0, y1 - y0)


@dataclass
class HeadOutput:
    """Score map ``[..., H, W]``; offset and normalised size maps ``[..., H, W, 2]``."""

    score: Tensor
    offset: Tensor
    size: Tensor

    def sample(self, i: int) -> "HeadOutput":
        return HeadOutput(self.score[i], self.offset[i], self.size[i])


def pixelwise_xcorr(x_feat: Tensor, z_feat: Tensor) -> Tensor:
    """Correlate every search position with every template position.

    ``out[..., h, w, i * W_z + j] = sum_c x[..., h, w, c] * z[..., i, j, c]``;
    parameter-free.
    """
    if x_feat.shape[-1] != z_feat.shape[-1]:
        raise ShapeError(f"PWCorr channel mismatch: search {x_feat.shape}, template {z_feat.shape}")
    *batch, hx, wx, c = x_feat.shape
    k_z = z_feat.shape[-3] * z_feat.shape[-2]
    corr = ad.matmul(tokenize(x_feat), ad.swapaxes(tokenize(z_feat), -1, -2))
    return ad.reshape(corr, (*batch, hx, wx, k_z))


class CorrelationFusion(Module):
    """PWCorr followed by the learned 1x1 transform to ``c_h`` channels."""

    def __init__(self, corr_channels: int = 64, c_h: int = 128, rng=None):
        self.channel_transform = Conv2d(corr_channels, c_h, 1, rng=make_rng(rng))

    def forward(self, x_feat: Tensor, z_feat: Tensor) -> Tensor:
        return self.channel_transform(pixelwise_xcorr(x_feat, z_feat))


class PredictionHead(Module):
    """Shared 3x3 conv, then classification and regression branches.

    Each branch stacks ``l_cls``/``l_reg`` separable self-attention layers over
    the tokenised map (``kind="conv"`` swaps them for 3x3 conv + ReLU layers,
    the fully-convolutional ablation) and ends in a 3x3 conv and sigmoid.
    """

    def __init__(self, c_h: int = 128, l_cls: int = 2, l_reg: int = 4, kind: str = "transformer", rng=None):
        if kind not in ("transformer", "conv"):
            raise ValueError(f"head kind must be 'transformer' or 'conv', got {kind!r}")
        rng = make_rng(rng)
        self.c_h = c_h
        self.kind = kind
        self.shared = Conv2d(c_h, c_h, 3, rng=rng)
        layer = (lambda: SeparableAttention(c_h, rng)) if kind == "transformer" else (lambda: Conv2d(c_h, c_h, 3, rng=rng))
        self.cls_layers = [layer() for _ in range(l_cls)]
        self.reg_layers = [layer() for _ in range(l_reg)]
        self.cls_out = Conv2d(c_h, 1, 3, rng=rng)
        self.reg_out = Conv2d(c_h, 4, 3, rng=rng)

    @property
    def l_cls(self) -> int:
        return len(self.cls_layers)

    @property
    def l_reg(self) -> int:
        return len(self.reg_layers)

    def _branch(self, fmap: Tensor, layers: list[Module]) -> Tensor:
        if self.kind == "conv":
            for layer in layers:
                fmap = ad.relu(layer(fmap))
            return fmap
        h, w = fmap.shape[-3:-1]
        tokens = tokenize(fmap)
        for layer in layers:
            tokens = layer(tokens)
        return untokenize(tokens, h, w)

    def forward(self, fused: Tensor) -> HeadOutput:
        if fused.shape[-1] != self.c_h:
            raise ShapeError(f"head expects {self.c_h} channels, got {fused.shape[-1]}")
        shared = ad.relu(self.shared(fused))
        score = ad.sigmoid(self.cls_out(self._branch(shared, self.cls_layers)))
        reg = ad.sigmoid(self.reg_out(self._branch(shared, self.reg_layers)))
        return HeadOutput(score[..., 0], reg[..., 0:2], reg[..., 2:4])


def head_forward(fused: Tensor, params: PredictionHead) -> HeadOutput:
    return params(fused)


def decode_box(h: HeadOutput, window: np.ndarray | None = None, search_side: float = 256) -> BoundingBox:
    """Box (search-crop pixels) at the peak of the (optionally windowed) score map.

    Ties in the argmax go to the smallest row-major index.
    """
    score = h.score.data if isinstance(h.score, Tensor) else np.asarray(h.score)
    if score.ndim != 2:
        raise ContractError(f"decode_box expects a single [H, W] score map, got {score.shape}")
    if window is not None:
        if window.shape != score.shape:
            raise ShapeError(f"window {window.shape} does not match score map {score.shape}")
        score = score * window
    rows, cols = score.shape
    r, c = np.unravel_index(int(np.argmax(score)), score.shape)
    off = (h.offset.data if isinstance(h.offset, Tensor) else np.asarray(h.offset))[r, c]
    size = (h.size.data if isinstance(h.size, Tensor) else np.asarray(h.size))[r, c]
    cx = (c + float(off[0])) / cols * search_side
    cy = (r + float(off[1])) / rows * search_side
    return BoundingBox.from_center(cx, cy, float(size[0]) * search_side, float(size[1]) * search_side)
