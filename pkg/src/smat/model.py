"""The full tracker network: backbone, correlation fusion and prediction head."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import io
from .attention import AttentionKind, FusionVariant
from .autodiff import ContractError, Tensor
from .backbone import Backbone, BackboneConfig, TemplateSearchFeatures
from .head import CorrelationFusion, HeadOutput, PredictionHead
from .nn import Module, make_rng

IMAGE_MEAN = np.array([0.485, 0.456, 0.406], dtype=np.float32)
IMAGE_STD = np.array([0.229, 0.224, 0.225], dtype=np.float32)


@dataclass
class ModelConfig:
    preset: str = "desk"
    variant: str = "D"
    attention: str = "separable"
    head: str = "transformer"
    c_h: int = 128
    l_cls: int = 2
    l_reg: int = 4
    seed: int = 0
    template_side: int = 128
    search_side: int = 256

    def __post_init__(self):
        self.variant = FusionVariant(self.variant).value
        self.attention = AttentionKind(self.attention).value

    def backbone_config(self) -> BackboneConfig:
        return BackboneConfig.preset(self.preset, template_side=self.template_side, search_side=self.search_side)

    def to_dict(self) -> dict[str, object]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, values: dict[str, str]) -> "ModelConfig":
        kwargs = {}
        for f in dataclasses.fields(cls):
            if f.name in values:
                kwargs[f.name] = int(values[f.name]) if f.type in ("int", int) else str(values[f.name])
        return cls(**kwargs)


def preprocess(img) -> Tensor:
    """uint8 ``[..., H, W, 3]`` image -> normalised float32 tensor."""
    arr = np.asarray(img, dtype=np.float32) / 255.0
    return Tensor((arr - IMAGE_MEAN) / IMAGE_STD)


@dataclass
class ModelOutput:
    head: HeadOutput
    features: TemplateSearchFeatures
    fused: Tensor


class SMATModel(Module):
    def __init__(self, cfg: ModelConfig | None = None):
        cfg = cfg or ModelConfig()
        rng = make_rng(cfg.seed)
        self.cfg = cfg
        bcfg = cfg.backbone_config()
        self.backbone = Backbone(bcfg, cfg.variant, cfg.attention, rng)
        corr_channels = (bcfg.template_side // bcfg.total_stride) ** 2
        self.fusion = CorrelationFusion(corr_channels, cfg.c_h, rng)
        self.head = PredictionHead(cfg.c_h, cfg.l_cls, cfg.l_reg, cfg.head, rng)

    @property
    def variant(self) -> FusionVariant:
        return self.backbone.variant

    def encode_template(self, z_img: Tensor) -> Tensor:
        """Template features on their own; only meaningful without cross paths (variant A)."""
        if self.variant is not FusionVariant.A:
            raise ContractError("template features can only be cached under fusion variant A")
        return self.backbone(z_img, None).z

    def forward(
        self,
        z_img: Tensor | None,
        x_img: Tensor,
        z_feat: Tensor | None = None,
        capture: bool = False,
    ) -> ModelOutput:
        if z_feat is not None:
            feats = self.backbone(None, x_img, capture)
            feats.z = z_feat
        else:
            feats = self.backbone(z_img, x_img, capture)
        fused = self.fusion(feats.x, feats.z)
        return ModelOutput(self.head(fused), feats, fused)

    def param_groups(self) -> dict[str, list]:
        groups: dict[str, list] = {"backbone": [], "head": []}
        for name, p in self.named_parameters():
            groups["backbone" if name.startswith("backbone.") else "head"].append(p)
        return groups

    def save(self, path: str | Path) -> None:
        """Write the checkpoint and a ``.cfg`` sidecar holding the model config."""
        path = Path(path)
        io.save_checkpoint(path, self.state_dict())
        io.write_config(path.with_suffix(".cfg"), self.cfg.to_dict())

    @classmethod
    def load(cls, path: str | Path, cfg: ModelConfig | None = None) -> "SMATModel":
        path = Path(path)
        if cfg is None:
            sidecar = path.with_suffix(".cfg")
            cfg = ModelConfig.from_dict(io.read_config(sidecar)) if sidecar.exists() else ModelConfig()
        model = cls(cfg)
        model.load_state_dict(io.load_checkpoint(path))
        return model
