"""Lightweight single-object tracker built on separable mixed attention.

Everything runs on numpy through the small reverse-mode autodiff in
:mod:`smat.autodiff`.
"""

from .autodiff import ContractError, ShapeError, Tensor, backward, grad_check, no_grad
from .head import BoundingBox, HeadOutput, decode_box
from .metrics import TrackMetrics, compute_metrics, iou
from .model import ModelConfig, SMATModel
from .tracker import Tracker

__version__ = "0.1.0"

__all__ = [
    "BoundingBox",
    "ContractError",
    "HeadOutput",
    "ModelConfig",
    "SMATModel",
    "ShapeError",
    "Tensor",
    "TrackMetrics",
    "Tracker",
    "backward",
    "compute_metrics",
    "decode_box",
    "grad_check",
    "iou",
    "no_grad",
]
