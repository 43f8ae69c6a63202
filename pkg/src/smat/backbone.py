"""Two-input hybrid CNN + ViT backbone with weight sharing across streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .attention import AttentionKind, AttentionTrace, Fusion, FusionVariant
from .autodiff import ContractError, ShapeError, Tensor
from .nn import Conv2d, InvertedResidual, Module, make_rng


@dataclass(frozen=True)
class StageSpec:
    kind: str  # "ir" or "vit"
    stride: int
    channels: int
    attn_dim: int | None = None


PRESETS: dict[str, dict] = {
    # default desk-scale plan; ViT stages sit at total strides 8 and 16
    "desk": dict(
        stem_channels=16,
        stages=(
            StageSpec("ir", 2, 24),
            StageSpec("ir", 2, 48),
            StageSpec("vit", 1, 64, 32),
            StageSpec("vit", 2, 96, 48),
        ),
    ),
    "full": dict(
        stem_channels=32,
        stages=(
            StageSpec("ir", 2, 64),
            StageSpec("ir", 2, 128),
            StageSpec("vit", 1, 256, 128),
            StageSpec("vit", 2, 384, 192),
        ),
    ),
    "tiny": dict(
        stem_channels=8,
        stages=(
            StageSpec("ir", 2, 12),
            StageSpec("ir", 2, 16),
            StageSpec("vit", 1, 24, 12),
            StageSpec("vit", 2, 32, 16),
        ),
    ),
}


@dataclass
class BackboneConfig:
    stem_channels: int = 16
    stem_stride: int = 2
    stages: tuple[StageSpec, ...] = PRESETS["desk"]["stages"]
    expansion: int = 2
    template_side: int = 128
    search_side: int = 256

    @classmethod
    def preset(cls, name: str, **overrides) -> "BackboneConfig":
        if name not in PRESETS:
            raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
        cfg = cls(**{**PRESETS[name], **overrides})
        cfg.validate()
        return cfg

    @property
    def total_stride(self) -> int:
        return self.stem_stride * math.prod(s.stride for s in self.stages)

    def vit_strides(self) -> list[int]:
        stride, out = self.stem_stride, []
        for s in self.stages:
            stride *= s.stride
            if s.kind == "vit":
                out.append(stride)
        return out

    def validate(self) -> None:
        kinds = [s.kind for s in self.stages]
        if kinds.count("ir") != 2 or kinds.count("vit") != 2 or len(kinds) != 4:
            raise ValueError(f"backbone needs exactly 2 IR and 2 ViT stages, got {kinds}")
        if self.total_stride != 16:
            raise ValueError(f"total stride must be 16, got {self.total_stride}")
        if self.vit_strides() != [8, 16]:
            raise ValueError(f"ViT stages must run at strides 8 and 16, got {self.vit_strides()}")
        for s in self.stages:
            if s.kind == "vit" and not s.attn_dim:
                raise ValueError(f"ViT stage {s} needs an attention width")
        for side in (self.template_side, self.search_side):
            if side % 16:
                raise ValueError(f"input side {side} not divisible by 16")

    @property
    def out_channels(self) -> int:
        return self.stages[-1].channels


def tokenize(fmap: Tensor) -> Tensor:
    """``[..., H, W, d]`` -> ``[..., H*W, d]`` in row-major spatial order."""
    if fmap.ndim < 3:
        raise ShapeError(f"tokenize expects [..., H, W, d], got {fmap.shape}")
    *batch, h, w, d = fmap.shape
    return ad.reshape(fmap, (*batch, h * w, d))


def untokenize(tokens: Tensor, h: int, w: int) -> Tensor:
    *batch, k, d = tokens.shape
    if k != h * w:
        raise ShapeError(f"cannot untokenize {k} tokens into a {h}x{w} grid")
    return ad.reshape(tokens, (*batch, h, w, d))


@dataclass
class StageTrace:
    """Attention captured at one ViT stage; ``search_map`` is ``[..., H_x, W_x]``."""

    stage: int
    attention: AttentionTrace
    search_map: np.ndarray


class ViTBlock(Module):
    """Shared 3x3 + 1x1 convs (C -> d), fusion on tokens, shared 1x1 back to C, residual."""

    def __init__(self, c: int, d: int, variant="D", attention="separable", rng=None):
        rng = make_rng(rng)
        self.c = c
        self.local = Conv2d(c, c, 3, rng=rng)
        self.proj_in = Conv2d(c, d, 1, rng=rng)
        self.fusion = Fusion(variant, d, attention, rng)
        self.proj_out = Conv2d(d, c, 1, rng=rng)

    def _encode(self, fmap: Tensor) -> Tensor:
        if fmap.shape[-1] != self.c:
            raise ShapeError(f"ViT block expects {self.c} channels, got {fmap.shape[-1]}")
        return tokenize(self.proj_in(ad.relu(self.local(fmap))))

    def _decode(self, fmap: Tensor, tokens: Tensor) -> Tensor:
        h, w = fmap.shape[-3:-1]
        return fmap + self.proj_out(untokenize(tokens, h, w))

    def forward(self, z: Tensor | None, x: Tensor | None, traces: list | None = None):
        zt = self._encode(z) if z is not None else None
        xt = self._encode(x) if x is not None else None
        zt, xt = self.fusion(zt, xt, traces)
        z_out = self._decode(z, zt) if z is not None else None
        x_out = self._decode(x, xt) if x is not None else None
        return z_out, x_out


def vit_block_forward(z: Tensor, x: Tensor, p: ViTBlock, variant=None):
    if variant is not None and FusionVariant(variant) is not p.fusion.variant:
        raise ValueError(f"block built for variant {p.fusion.variant.value}")
    return p(z, x)


class ViTStage(Module):
    """IR transition (sets channels, carries the stage stride) followed by a ViT block."""

    def __init__(self, c_in: int, spec: StageSpec, expansion: int, variant, attention, rng=None):
        rng = make_rng(rng)
        self.transition = InvertedResidual(c_in, spec.channels, spec.stride, expansion, rng)
        self.block = ViTBlock(spec.channels, spec.attn_dim, variant, attention, rng)

    def forward(self, z, x, traces=None):
        z = self.transition(z) if z is not None else None
        x = self.transition(x) if x is not None else None
        return self.block(z, x, traces)


@dataclass
class TemplateSearchFeatures:
    z: Tensor | None
    x: Tensor | None
    traces: list[StageTrace] = field(default_factory=list)

    @property
    def channels(self) -> int:
        return (self.z if self.z is not None else self.x).shape[-1]

    @property
    def k(self) -> int:
        total = 0
        for t in (self.z, self.x):
            if t is not None:
                total += t.shape[-3] * t.shape[-2]
        return total


class Backbone(Module):
    """Stem + 2 IR stages + 2 ViT stages, shared by template and search streams.

    ``template_calls`` counts how many times the template stream was encoded.
    """

    def __init__(self, cfg: BackboneConfig | None = None, variant="D", attention="separable", rng=None):
        cfg = cfg or BackboneConfig()
        cfg.validate()
        rng = make_rng(rng)
        self.cfg = cfg
        self.variant = FusionVariant(variant)
        self.attention = AttentionKind(attention)
        self.stem = Conv2d(3, cfg.stem_channels, 3, stride=cfg.stem_stride, rng=rng)
        stages: list[Module] = []
        c = cfg.stem_channels
        for spec in cfg.stages:
            if spec.kind == "ir":
                stages.append(InvertedResidual(c, spec.channels, spec.stride, cfg.expansion, rng))
            else:
                stages.append(ViTStage(c, spec, cfg.expansion, variant, attention, rng))
            c = spec.channels
        self.stages = stages
        self.template_calls = 0

    def _check_input(self, img: Tensor, name: str) -> None:
        if img.ndim not in (3, 4) or img.shape[-1] != 3:
            raise ShapeError(f"{name} must be [N?, H, W, 3], got {img.shape}")
        h, w = img.shape[-3:-1]
        if h % 16 or w % 16:
            raise ShapeError(f"{name} sides must be divisible by 16, got {h}x{w}")

    def forward(self, z_in: Tensor | None, x_in: Tensor | None, capture: bool = False) -> TemplateSearchFeatures:
        if z_in is None and x_in is None:
            raise ContractError("backbone needs at least one input")
        if (z_in is None or x_in is None) and self.variant is not FusionVariant.A:
            raise ContractError(f"variant {self.variant.value} fuses both streams; pass template and search")
        if z_in is not None:
            self._check_input(z_in, "template")
            self.template_calls += 1
        if x_in is not None:
            self._check_input(x_in, "search")

        stem = lambda t: ad.relu(self.stem(t)) if t is not None else None  # noqa: E731
        z, x = stem(z_in), stem(x_in)
        traces: list[StageTrace] = []
        vit_index = 0
        for stage in self.stages:
            if isinstance(stage, ViTStage):
                local: list | None = [] if capture else None
                z, x = stage(z, x, local)
                if local and x is not None and local[0].search_query is not None:
                    h, w = x.shape[-3:-1]
                    sq = local[0].search_query
                    traces.append(StageTrace(vit_index, local[0], sq.reshape(*sq.shape[:-1], h, w)))
                vit_index += 1
            else:
                z = stage(z) if z is not None else None
                x = stage(x) if x is not None else None
        return TemplateSearchFeatures(z, x, traces)


def backbone_forward(z_in: Tensor, x_in: Tensor, cfg: BackboneConfig, params: Backbone) -> TemplateSearchFeatures:
    if params.cfg != cfg:
        raise ValueError("parameters were built for a different backbone config")
    return params(z_in, x_in, capture=True)
