"""Separable (linear-cost) and standard attention, and the four fusion topologies.

Separable attention scores each token with a single scalar query, pools the
keys into one context vector with the softmaxed scores and gates the
rectified values with that vector::

    A = sum_k softmax(Q) * K          (1 x d)
    M = A * relu(V)                   (k x d, A broadcast over rows)

No ``k x k`` product is ever formed. Token matrices are ``[..., k, d]``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .nn import LayerNorm, Linear, Module, make_rng


@dataclass
class AttentionTrace:
    """Intermediate quantities of one attention evaluation (numpy copies)."""

    Q: np.ndarray
    Q_soft: np.ndarray
    K: np.ndarray
    V: np.ndarray
    A: np.ndarray
    M: np.ndarray
    search_query: np.ndarray | None = None


class FusionVariant(str, enum.Enum):
    """How template and search tokens interact inside a ViT stage.

    A: shared self-attention per region (no cross path).
    B: shared cross-attention in both directions (no intra-region path).
    C: self-attention then cross-attention, cascaded.
    D: mixed attention over the concatenated tokens (default).
    """

    A = "A"
    B = "B"
    C = "C"
    D = "D"


class AttentionKind(str, enum.Enum):
    SEPARABLE = "separable"
    STANDARD = "standard"


def _check_width(name: str, tokens: Tensor, d: int) -> None:
    if tokens.shape[-1] != d:
        raise ShapeError(f"{name}: token width {tokens.shape[-1]} does not match layer width {d}")


def context_vector(q: Tensor, k: Tensor) -> tuple[Tensor, np.ndarray]:
    """Softmax-weighted sum of key rows; returns ``A`` and the softmaxed query.

    Normalisation is applied after pooling, which costs ``d`` divisions
    instead of ``k``.
    """
    e = ad.exp(q - q.data.max(axis=-2, keepdims=True))
    total = e.sum(axis=-2, keepdims=True)
    a = (e * k).sum(axis=-2, keepdims=True) / total
    return a, e.data / total.data


def separable_core(q: Tensor, k: Tensor, v: Tensor) -> tuple[Tensor, AttentionTrace]:
    """Separable attention on projected ``Q [.., k, 1]``, ``K, V [.., k, d]``.

    Uses exactly ``2*k*d + d`` multiplications.
    """
    if q.shape[-1] != 1:
        raise ShapeError(f"query must have width 1, got {q.shape}")
    if not (q.shape[-2] == k.shape[-2] == v.shape[-2]) or k.shape[-1] != v.shape[-1]:
        raise ShapeError(f"separable_core shape mismatch: Q {q.shape}, K {k.shape}, V {v.shape}")
    a, q_soft = context_vector(q, k)
    m = a * ad.relu(v)
    return m, AttentionTrace(q.data, q_soft, k.data, v.data, a.data, m.data)


class SeparableAttention(Module):
    """One separable transformer layer of width ``d``.

    norm -> qkv projections -> separable core -> residual -> ffn-out (+ residual).
    """

    def __init__(self, d: int, rng=None):
        rng = make_rng(rng)
        self.d = d
        self.norm = LayerNorm(d)
        # a bias on the scalar query logits would cancel in the softmax
        self.w_q = Linear(d, 1, rng, bias=False)
        self.w_k = Linear(d, d, rng)
        self.w_v = Linear(d, d, rng)
        self.ffn_out = Linear(d, d, rng)

    def _finish(self, residual: Tensor, m: Tensor) -> Tensor:
        y = residual + m
        return y + self.ffn_out(y)

    def forward(self, tokens: Tensor, traces: list | None = None) -> Tensor:
        _check_width("separable layer", tokens, self.d)
        h = self.norm(tokens)
        m, trace = separable_core(self.w_q(h), self.w_k(h), self.w_v(h))
        if traces is not None:
            traces.append(trace)
        return self._finish(tokens, m)

    def cross(self, q_tokens: Tensor, kv_tokens: Tensor, traces: list | None = None) -> Tensor:
        """Update ``q_tokens`` with a context vector pooled over ``kv_tokens``.

        Query scores and keys come from ``kv_tokens``; values and the residual
        come from ``q_tokens``, so information flows strictly across regions.
        """
        _check_width("separable cross layer", q_tokens, self.d)
        _check_width("separable cross layer", kv_tokens, self.d)
        hq = self.norm(q_tokens)
        hkv = self.norm(kv_tokens)
        q = self.w_q(hkv)
        k = self.w_k(hkv)
        v = self.w_v(hq)
        a, q_soft = context_vector(q, k)
        m = a * ad.relu(v)
        if traces is not None:
            traces.append(AttentionTrace(q.data, q_soft, k.data, v.data, a.data, m.data))
        return self._finish(q_tokens, m)


class StandardAttention(Module):
    """Single-head dot-product attention layer: ``softmax(Q K^T / sqrt(d)) V``.

    Same residual/ffn layout as :class:`SeparableAttention`. The trace's
    ``Q_soft`` is the mean attention each token receives (columns of the
    row-stochastic matrix averaged over rows), so it also sums to 1.
    """

    def __init__(self, d: int, rng=None):
        rng = make_rng(rng)
        self.d = d
        self.norm = LayerNorm(d)
        self.w_q = Linear(d, d, rng)
        self.w_k = Linear(d, d, rng, bias=False)  # a key bias is constant per softmax row
        self.w_v = Linear(d, d, rng)
        self.ffn_out = Linear(d, d, rng)

    def _attend(self, q: Tensor, k: Tensor, v: Tensor, traces: list | None) -> Tensor:
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) / np.sqrt(self.d)
        probs = ad.softmax(scores, axis=-1)
        out = ad.matmul(probs, v)
        if traces is not None:
            received = probs.data.mean(axis=-2)[..., None]
            traces.append(AttentionTrace(q.data, received, k.data, v.data, probs.data, out.data))
        return out

    def _finish(self, residual: Tensor, m: Tensor) -> Tensor:
        y = residual + m
        return y + self.ffn_out(y)

    def forward(self, tokens: Tensor, traces: list | None = None) -> Tensor:
        _check_width("standard layer", tokens, self.d)
        h = self.norm(tokens)
        return self._finish(tokens, self._attend(self.w_q(h), self.w_k(h), self.w_v(h), traces))

    def cross(self, q_tokens: Tensor, kv_tokens: Tensor, traces: list | None = None) -> Tensor:
        _check_width("standard cross layer", q_tokens, self.d)
        _check_width("standard cross layer", kv_tokens, self.d)
        hq = self.norm(q_tokens)
        hkv = self.norm(kv_tokens)
        return self._finish(q_tokens, self._attend(self.w_q(hq), self.w_k(hkv), self.w_v(hkv), traces))


def make_attention(kind: AttentionKind | str, d: int, rng=None) -> Module:
    kind = AttentionKind(kind)
    return SeparableAttention(d, rng) if kind is AttentionKind.SEPARABLE else StandardAttention(d, rng)


def separable_layer_forward(tokens: Tensor, p: SeparableAttention) -> Tensor:
    return p(tokens)


def standard_attention_forward(tokens: Tensor, p: StandardAttention) -> Tensor:
    return p(tokens)


def separable_cross_attention_forward(q_tokens: Tensor, kv_tokens: Tensor, p: SeparableAttention) -> Tensor:
    return p.cross(q_tokens, kv_tokens)


def mixed_attention_forward(
    z_tokens: Tensor, x_tokens: Tensor, p: Module, traces: list | None = None
) -> tuple[Tensor, Tensor]:
    """One attention layer over template-then-search tokens, split back at ``k_z``."""
    if z_tokens.shape[-1] != x_tokens.shape[-1]:
        raise ShapeError(f"template width {z_tokens.shape[-1]} != search width {x_tokens.shape[-1]}")
    k_z = z_tokens.shape[-2]
    out = p(ad.concat([z_tokens, x_tokens], axis=-2), traces)
    return ad.split(out, k_z, axis=-2)


class Fusion(Module):
    """Token interaction for one ViT stage, per :class:`FusionVariant`.

    Weights are shared between the template and search streams. Variant A
    accepts ``z_tokens=None`` to process a search region against a cached
    template (it has no cross path, so the template never needs recomputing).
    """

    def __init__(self, variant: FusionVariant | str, d: int, attention: AttentionKind | str = "separable", rng=None):
        rng = make_rng(rng)
        self.variant = FusionVariant(variant)
        self.attention = AttentionKind(attention)
        self.d = d
        self.self_attn = make_attention(attention, d, rng) if self.variant in ("A", "C", "D") else None
        self.cross_attn = make_attention(attention, d, rng) if self.variant in ("B", "C") else None

    def forward(
        self, z_tokens: Tensor | None, x_tokens: Tensor | None, traces: list | None = None
    ) -> tuple[Tensor | None, Tensor | None]:
        v = self.variant
        if (z_tokens is None or x_tokens is None) and v is not FusionVariant.A:
            raise ad.ContractError(f"variant {v.value} needs both template and search tokens")
        local: list | None = [] if traces is not None else None

        if v is FusionVariant.D:
            z_out, x_out = mixed_attention_forward(z_tokens, x_tokens, self.self_attn, local)
            if local is not None:
                local[0].search_query = local[0].Q_soft[..., z_tokens.shape[-2] :, 0]
        elif v is FusionVariant.A:
            z_out = self.self_attn(z_tokens) if z_tokens is not None else None
            x_out = self.self_attn(x_tokens, local) if x_tokens is not None else None
            if local:
                local[0].search_query = local[0].Q_soft[..., 0]
        else:
            if v is FusionVariant.C:
                z_tokens = self.self_attn(z_tokens)
                x_tokens = self.self_attn(x_tokens, local)
                if local:
                    local[0].search_query = local[0].Q_soft[..., 0]
            x_out = self.cross_attn.cross(x_tokens, z_tokens)
            cross_local: list | None = [] if local is not None else None
            z_out = self.cross_attn.cross(z_tokens, x_tokens, cross_local)
            if v is FusionVariant.B and cross_local:
                # scores pooled over the search tokens while updating the template
                cross_local[0].search_query = cross_local[0].Q_soft[..., 0]
                local.append(cross_local[0])
        if traces is not None and local:
            traces.append(local[0])
        return z_out, x_out


def fusion_forward(variant: FusionVariant | str, z_tokens: Tensor, x_tokens: Tensor, p: Fusion):
    variant = FusionVariant(variant)
    if p.variant is not variant:
        raise ValueError(f"fusion parameters were built for variant {p.variant.value}, not {variant.value}")
    return p(z_tokens, x_tokens)


def fusion_multiply_count(
    variant: FusionVariant | str,
    k_z: int,
    k_x: int,
    d: int,
    attention: AttentionKind | str = "separable",
    template_cached: bool = True,
) -> int:
    """Instrumented per-frame multiply count of one fusion stage.

    With ``template_cached`` variant A only processes the search tokens,
    which is what a two-stream tracker pays per frame.
    """
    variant = FusionVariant(variant)
    fusion = Fusion(variant, d, attention, rng=0)
    rng = np.random.default_rng(1)
    z = Tensor(rng.standard_normal((k_z, d)))
    x = Tensor(rng.standard_normal((k_x, d)))
    if variant is FusionVariant.A and template_cached:
        z = None
    with ad.no_grad(), ad.count_multiplies() as counter:
        fusion(z, x)
    return counter.total
