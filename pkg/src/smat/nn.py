"""Layer containers and the convolutional building blocks of the backbone."""

from __future__ import annotations

from typing import Iterator

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor


class Parameter(Tensor):
    """A learnable tensor (``requires_grad`` defaults to True)."""

    def __init__(self, data, requires_grad: bool = True, dtype=None):
        super().__init__(data, requires_grad=requires_grad, dtype=dtype)


def make_rng(rng: np.random.Generator | int | None) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def init_params(
    shape: tuple[int, ...], fan_in: int, rng: np.random.Generator | int | None = 0, dtype=np.float32
) -> Parameter:
    """Seeded uniform initialisation in ``[-sqrt(1/fan_in), sqrt(1/fan_in)]``."""
    bound = np.sqrt(1.0 / fan_in)
    return Parameter(make_rng(rng).uniform(-bound, bound, size=shape).astype(dtype))


def zeros_param(shape: tuple[int, ...], dtype=np.float32) -> Parameter:
    return Parameter(np.zeros(shape, dtype=dtype))


class Module:
    """Minimal parameter container.

    Parameters are discovered from instance attributes in definition order:
    ``Parameter`` values, nested ``Module`` values, and lists of modules.
    """

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, value in vars(self).items():
            if isinstance(value, Parameter):
                yield prefix + name, value
            elif isinstance(value, Module):
                yield from value.named_parameters(f"{prefix}{name}.")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{prefix}{name}.{i}.")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    @property
    def dtype(self):
        params = self.parameters()
        return params[0].dtype if params else np.dtype(np.float32)

    def to(self, dtype) -> "Module":
        for p in self.parameters():
            p.data = p.data.astype(dtype)
            p.grad = None
        return self

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data for name, p in self.named_parameters()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        own = dict(self.named_parameters())
        missing = sorted(set(own) - set(state))
        unexpected = sorted(set(state) - set(own))
        if missing or unexpected:
            raise KeyError(f"state mismatch: missing={missing} unexpected={unexpected}")
        for name, p in own.items():
            value = np.asarray(state[name])
            if value.shape != p.shape:
                raise ShapeError(f"{name}: checkpoint shape {value.shape} != model shape {p.shape}")
            p.data = value.astype(p.dtype)

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError


class Linear(Module):
    """Affine map over the last axis (a 1x1 convolution on token matrices)."""

    def __init__(self, d_in: int, d_out: int, rng=None, bias: bool = True):
        rng = make_rng(rng)
        self.weight = init_params((d_in, d_out), d_in, rng)
        self.bias = zeros_param((d_out,)) if bias else None

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.weight.shape[0]:
            raise ShapeError(f"linear input width {x.shape[-1]} != {self.weight.shape[0]}")
        y = ad.matmul(x, self.weight)
        return y + self.bias if self.bias is not None else y


class Conv2d(Module):
    def __init__(
        self,
        c_in: int,
        c_out: int,
        kernel: int,
        stride: int = 1,
        padding: int | None = None,
        groups: int = 1,
        rng=None,
        bias: bool = True,
    ):
        if c_in % groups or c_out % groups:
            raise ShapeError(f"channels {c_in}->{c_out} not divisible by groups={groups}")
        rng = make_rng(rng)
        fan_in = kernel * kernel * c_in // groups
        self.weight = init_params((kernel, kernel, c_in // groups, c_out), fan_in, rng)
        self.bias = zeros_param((c_out,)) if bias else None
        self.stride = stride
        self.padding = kernel // 2 if padding is None else padding
        self.groups = groups

    def forward(self, x: Tensor) -> Tensor:
        y = ad.conv2d(x, self.weight, self.stride, self.padding, self.groups)
        return y + self.bias if self.bias is not None else y


class LayerNorm(Module):
    """Per-token normalisation over the feature axis with affine scale/shift."""

    def __init__(self, d: int, eps: float = 1e-5):
        self.gamma = Parameter(np.ones(d, dtype=np.float32))
        self.beta = zeros_param((d,))
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return ad.layer_norm(x, self.gamma, self.beta, self.eps)


def norm_forward(tokens: Tensor, p: LayerNorm) -> Tensor:
    return p(tokens)


class InvertedResidual(Module):
    """Expand (1x1) -> depthwise 3x3 (carries the stride) -> project (1x1).

    The skip connection exists iff ``stride == 1`` and ``c_in == c_out``.
    ReLU follows the expansion and the depthwise conv; the projection is linear.
    """

    def __init__(self, c_in: int, c_out: int, stride: int = 1, expansion: int = 2, rng=None):
        if stride not in (1, 2):
            raise ValueError(f"stride must be 1 or 2, got {stride}")
        rng = make_rng(rng)
        hidden = c_in * expansion
        self.expand = Conv2d(c_in, hidden, 1, rng=rng)
        self.depthwise = Conv2d(hidden, hidden, 3, stride=stride, groups=hidden, rng=rng)
        self.project = Conv2d(hidden, c_out, 1, rng=rng)
        self.c_in = c_in
        self.c_out = c_out
        self.stride = stride

    @property
    def has_skip(self) -> bool:
        return self.stride == 1 and self.c_in == self.c_out

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[-1] != self.c_in:
            raise ShapeError(f"inverted residual expects {self.c_in} channels, got {x.shape[-1]}")
        h = ad.relu(self.expand(x))
        h = ad.relu(self.depthwise(h))
        h = self.project(h)
        return x + h if self.has_skip else h


def inverted_residual_forward(x: Tensor, p: InvertedResidual) -> Tensor:
    return p(x)
