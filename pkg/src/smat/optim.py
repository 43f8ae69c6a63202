"""AdamW with decoupled weight decay and per-group learning-rate multipliers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ShapeError


@dataclass
class AdamWConfig:
    lr: float = 4e-4
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


@dataclass
class AdamWState:
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adamw_step(
    params: list[np.ndarray],
    grads: list[np.ndarray],
    state: AdamWState,
    cfg: AdamWConfig,
    lr_scale: float = 1.0,
) -> tuple[list[np.ndarray], AdamWState]:
    """One bias-corrected AdamW update; ``params`` are updated in place and returned."""
    if len(params) != len(grads):
        raise ShapeError(f"{len(params)} parameters but {len(grads)} gradients")
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.step += 1
    lr = cfg.lr * lr_scale
    c1 = 1.0 - cfg.beta1**state.step
    c2 = 1.0 - cfg.beta2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.shape:
            raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        p *= 1.0 - lr * cfg.weight_decay
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)
    return params, state


class AdamW:
    """Optimizer over named parameter groups.

    Args:
        groups: group name -> list of parameters.
        cfg: base hyperparameters.
        lr_mult: group name -> multiplier on ``cfg.lr`` (default 1).
    """

    def __init__(self, groups: dict[str, list], cfg: AdamWConfig | None = None, lr_mult: dict[str, float] | None = None):
        self.groups = groups
        self.cfg = cfg or AdamWConfig()
        self.lr_mult = dict(lr_mult or {})
        self.schedule_scale = 1.0
        self.states = {name: AdamWState() for name in groups}

    def group_lr(self, name: str) -> float:
        return self.cfg.lr * self.schedule_scale * self.lr_mult.get(name, 1.0)

    def step(self) -> None:
        for name, params in self.groups.items():
            grads = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]
            adamw_step([p.data for p in params], grads, self.states[name], self.cfg,
                       self.schedule_scale * self.lr_mult.get(name, 1.0))

    def zero_grad(self) -> None:
        for params in self.groups.values():
            for p in params:
                p.grad = None
