"""Finite-difference gradient suite over every layer type, run in float64."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import SeparableAttention, StandardAttention
from .autodiff import Tensor, grad_check
from .data import TrainingPair
from .head import CorrelationFusion, PredictionHead, pixelwise_xcorr
from .model import ModelConfig, SMATModel
from .nn import Conv2d, InvertedResidual, LayerNorm, Module

LAYER_TOL = 1e-4
COMPOSITE_TOL = 1e-3


@dataclass
class GradResult:
    name: str
    error: float
    tol: float

    @property
    def ok(self) -> bool:
        return self.error < self.tol


def _rand(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, dtype=np.float64)


def _weights(rng, shape) -> np.ndarray:
    # random projection used to reduce a tensor output to a scalar
    return rng.standard_normal(shape)


def jitter_biases(module: Module, rng: np.random.Generator, scale: float = 0.3) -> Module:
    """Give all-zero parameters (biases) random values so no ReLU input sits exactly on its kink."""
    for p in module.parameters():
        if not np.any(p.data):
            p.data = rng.uniform(-scale, scale, p.shape).astype(p.dtype)
    return module


def check_module(module: Module, make_input: Callable[[], Tensor], seed: int = 0, max_entries: int | None = 40) -> float:
    """Worst relative error over the input and every parameter of ``module``."""
    rng = np.random.default_rng(seed)
    jitter_biases(module.to(np.float64), rng)
    x = make_input()
    proj = Tensor(_weights(rng, module(x).shape))

    def f(inp):
        return (module(inp) * proj).sum()

    worst = grad_check(f, x, max_entries=max_entries, seed=seed, skip_kinks=True)
    worst = max(worst, grad_check(f, x, wrt=module.parameters(), max_entries=max_entries, seed=seed, skip_kinks=True))
    return worst


def miniature_model(seed: int = 0, head: str = "transformer", variant: str = "D") -> SMATModel:
    """Tiny-preset model on 32/64 px inputs, in float64."""
    cfg = ModelConfig(preset="tiny", variant=variant, head=head, c_h=8, l_cls=1, l_reg=1,
                      seed=seed, template_side=32, search_side=64)
    return jitter_biases(SMATModel(cfg).to(np.float64), np.random.default_rng(seed))


def miniature_pair(seed: int = 0) -> TrainingPair:
    rng = np.random.default_rng(seed)
    return TrainingPair(
        rng.integers(0, 256, size=(32, 32, 3), dtype=np.uint8),
        rng.integers(0, 256, size=(64, 64, 3), dtype=np.uint8),
        np.array([0.3, 0.35, 0.3, 0.25]),
    )


def composite_loss_error(seed: int = 0, max_entries: int = 6, eps: float = 1e-4) -> float:
    """Gradient check of the full weighted loss through the miniature model.

    Early-layer gradients here are ~1e-8, so a 1e-6 step drowns them in
    float64 roundoff of the O(1) loss; the larger step is safe because
    entries whose probes cross a relu/clip/max/min branch are skipped.
    """
    from .train import compute_loss

    model = miniature_model(seed)
    pair = miniature_pair(seed)
    dummy = Tensor(np.zeros(1))
    return grad_check(lambda _: compute_loss(model, [pair])[0], dummy, eps=eps,
                      wrt=model.parameters(), max_entries=max_entries, seed=seed, skip_kinks=True)


def run_suite(seed: int = 0) -> list[GradResult]:
    """Every layer type at 1e-4, the composite loss at 1e-3."""
    rng = np.random.default_rng(seed)
    results = []

    def add(name, err, tol=LAYER_TOL):
        results.append(GradResult(name, float(err), tol))

    add("conv2d", check_module(Conv2d(3, 4, 3, stride=2, rng=seed), lambda: _rand(rng, 6, 6, 3), seed))
    add("conv2d_depthwise", check_module(Conv2d(4, 4, 3, groups=4, rng=seed), lambda: _rand(rng, 5, 5, 4), seed))
    add("inverted_residual", check_module(InvertedResidual(4, 4, 1, 2, seed), lambda: _rand(rng, 5, 5, 4), seed))
    add("inverted_residual_s2", check_module(InvertedResidual(3, 5, 2, 2, seed), lambda: _rand(rng, 6, 6, 3), seed))
    norm = LayerNorm(3)
    norm.gamma.data = rng.uniform(0.5, 1.5, 3)
    norm.beta.data = rng.standard_normal(3)
    add("layer_norm", check_module(norm, lambda: _rand(rng, 4, 3), seed))
    add("separable_attention", check_module(SeparableAttention(3, seed), lambda: _rand(rng, 4, 3), seed))
    add("standard_attention", check_module(StandardAttention(3, seed), lambda: _rand(rng, 4, 3), seed))

    z = _rand(rng, 2, 2, 3)
    proj = Tensor(_weights(rng, (4, 4, 4)))
    x = _rand(rng, 4, 4, 3)
    err = max(
        grad_check(lambda t: (pixelwise_xcorr(t, z) * proj).sum(), x),
        grad_check(lambda t: (pixelwise_xcorr(x, t) * proj).sum(), z),
    )
    add("pwcorr", err)

    fusion = jitter_biases(CorrelationFusion(4, 6, seed).to(np.float64), rng)
    head = jitter_biases(PredictionHead(6, 1, 1, "transformer", seed).to(np.float64), rng)
    w_s, w_o, w_z = (Tensor(_weights(rng, s)) for s in ((4, 4), (4, 4, 2), (4, 4, 2)))

    def head_loss(t):
        out = head(fusion(t, z))
        return (out.score * w_s).sum() + (out.offset * w_o).sum() + (out.size * w_z).sum()

    err = max(
        grad_check(head_loss, x, max_entries=20, seed=seed),
        grad_check(head_loss, x, wrt=head.parameters() + fusion.parameters(), max_entries=20, seed=seed),
    )
    add("pwcorr_head", err)
    add("composite_loss", composite_loss_error(seed), COMPOSITE_TOL)
    return results


def format_results(results: list[GradResult]) -> str:
    lines = [f"{'layer':<24}{'max rel err':>14}{'tol':>10}  status"]
    for r in results:
        lines.append(f"{r.name:<24}{r.error:>14.3e}{r.tol:>10.0e}  {'ok' if r.ok else 'FAIL'}")
    return "\n".join(lines)


if __name__ == "__main__":  # pragma: no cover
    print(format_results(run_suite()))
