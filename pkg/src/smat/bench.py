"""Latency benchmarks and parameter accounting."""

from __future__ import annotations

import csv
import io as _io
import json
import time
from collections import OrderedDict
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import autodiff as ad
from .attention import Fusion, FusionVariant, SeparableAttention, StandardAttention
from .autodiff import ContractError, Tensor
from .model import ModelConfig, SMATModel
from .nn import Module

REFERENCE_PARAMS = 3.8e6  # published full-size parameter count


@dataclass
class BenchRecord:
    mechanism: str
    k: list[int]
    median_ms: list[float]
    slope: float

    def __post_init__(self):
        if any(t <= 0 for t in self.median_ms):
            raise ContractError(f"{self.mechanism}: non-positive timing in {self.median_ms}")


def median_time(fn: Callable[[], object], reps: int = 10, warmup: int = 2) -> float:
    """Median wall time of ``fn`` in milliseconds, warm-up runs discarded."""
    for _ in range(warmup):
        fn()
    times = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return float(np.median(times)) * 1e3


def fit_slope(k, times) -> float:
    """Least-squares slope of ``log(time)`` against ``log(k)``."""
    k = np.asarray(k, dtype=np.float64)
    t = np.asarray(times, dtype=np.float64)
    if len(np.unique(k)) < 4:
        raise ContractError(f"need at least 4 distinct token counts for a fit, got {sorted(set(k.tolist()))}")
    slope, _ = np.polyfit(np.log(k), np.log(t), 1)
    return float(slope)


def bench_attention(
    k_values, d: int = 64, repetitions: int = 7, seed: int = 0, min_span: float = 16.0, rounds: int = 3
) -> tuple[BenchRecord, BenchRecord]:
    """Time separable vs standard self-attention layers over token counts ``k_values``.

    Each ``k`` is timed ``repetitions`` times in each of ``rounds`` sweeps; the
    record holds the median over all of them.

    Raises:
        ContractError: fewer than four distinct ``k`` or a span below ``min_span``.
    """
    ks = sorted(set(int(k) for k in k_values))
    if len(ks) < 4:
        raise ContractError(f"need at least 4 distinct token counts, got {ks}")
    if ks[-1] < min_span * ks[0]:
        raise ContractError(f"token counts must span at least {min_span:g}x, got {ks[0]}..{ks[-1]}")
    rng = np.random.default_rng(seed)
    layers = {"separable": SeparableAttention(d, rng), "standard": StandardAttention(d, rng)}
    tokens = {k: Tensor(rng.standard_normal((k, d)).astype(np.float32)) for k in ks}
    records = []
    for name, layer in layers.items():
        samples: dict[int, list[float]] = {k: [] for k in ks}
        with ad.no_grad():
            # several sweeps over k: load drift is shared across k, while the
            # consecutive runs inside a sweep keep each k's working set warm
            for _ in range(rounds):
                for k in ks:
                    layer(tokens[k])
                    for _ in range(repetitions):
                        t0 = time.perf_counter()
                        layer(tokens[k])
                        samples[k].append(time.perf_counter() - t0)
        times = [float(np.median(samples[k])) * 1e3 for k in ks]
        records.append(BenchRecord(name, ks, times, fit_slope(ks, times)))
    return records[0], records[1]


def bench_csv(records) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mechanism", "k", "median_ms"])
    for rec in records:
        for k, t in zip(rec.k, rec.median_ms):
            w.writerow([rec.mechanism, k, f"{t:.6g}"])
    return buf.getvalue()


def time_fusion_variants(
    k_z: int = 64, k_x: int = 256, d: int = 48, reps: int = 50, attention: str = "separable", seed: int = 0
) -> dict[str, float]:
    """Median forward time (ms) of each fusion topology.

    Variant A runs on the search tokens only since its template
    features are computed once per sequence.
    """
    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal((k_z, d)).astype(np.float32))
    x = Tensor(rng.standard_normal((k_x, d)).astype(np.float32))
    fusions = {v.value: Fusion(v, d, attention, seed) for v in FusionVariant}
    fns = {
        name: (lambda f=f: f(None, x)) if name == "A" else (lambda f=f: f(z, x))
        for name, f in fusions.items()
    }
    out = {name: [] for name in fns}
    with ad.no_grad():
        for fn in fns.values():
            fn()
        # interleave the variants so drift in machine load hits all of them alike
        for _ in range(reps):
            for name, fn in fns.items():
                t0 = time.perf_counter()
                fn()
                out[name].append(time.perf_counter() - t0)
    return {name: float(np.median(ts)) * 1e3 for name, ts in out.items()}


def time_model(cfg: ModelConfig, reps: int = 50, seed: int = 0) -> float:
    """Median full-model forward time (ms) for one template/search pair."""
    model = SMATModel(cfg)
    bcfg = model.backbone.cfg
    rng = np.random.default_rng(seed)
    z = Tensor(rng.standard_normal((1, bcfg.template_side, bcfg.template_side, 3)).astype(np.float32))
    x = Tensor(rng.standard_normal((1, bcfg.search_side, bcfg.search_side, 3)).astype(np.float32))
    with ad.no_grad():
        return median_time(lambda: model(z, x), reps)


def _group_of(name: str) -> str:
    parts = name.split(".")
    if parts[0] == "backbone":
        if parts[1] == "stages":
            return f"backbone.stage{parts[2]}"
        return f"backbone.{parts[1]}"
    if parts[0] == "head" and parts[1] in ("cls_layers", "cls_out"):
        return "head.cls_branch"
    if parts[0] == "head" and parts[1] in ("reg_layers", "reg_out"):
        return "head.reg_branch"
    return ".".join(parts[:2])


def count_parameters(model: Module) -> "OrderedDict[str, int]":
    """Learnable element counts grouped by module, plus ``total``.

    The pixel-wise correlation is listed explicitly with its zero count.
    """
    counts: OrderedDict[str, int] = OrderedDict()
    for name, p in model.named_parameters():
        group = _group_of(name)
        if group == "fusion.channel_transform":
            counts.setdefault("fusion.pwcorr", 0)
        counts[group] = counts.get(group, 0) + p.size
    if isinstance(model, SMATModel):
        counts.setdefault("fusion.pwcorr", 0)
    counts["total"] = sum(v for k, v in counts.items())
    return counts


def parameter_report(presets=("desk", "full")) -> dict:
    report = {}
    for preset in presets:
        counts = count_parameters(SMATModel(ModelConfig(preset=preset)))
        entry = {"modules": dict(counts), "total": counts["total"]}
        if preset == "full":
            entry["reference_total"] = REFERENCE_PARAMS
            entry["deviation_pct"] = 100.0 * (counts["total"] - REFERENCE_PARAMS) / REFERENCE_PARAMS
        report[preset] = entry
    return report


def format_parameter_report(report: dict) -> str:
    lines = []
    for preset, entry in report.items():
        lines.append(f"[{preset}]")
        for name, n in entry["modules"].items():
            if name != "total":
                lines.append(f"  {name:<26}{n:>12,d}")
        lines.append(f"  {'total':<26}{entry['total']:>12,d}")
        if "deviation_pct" in entry:
            lines.append(
                f"  reference {entry['reference_total'] / 1e6:.1f}M, deviation {entry['deviation_pct']:+.1f}%"
            )
    return "\n".join(lines)


def parameter_json(report: dict) -> str:
    return json.dumps(report, indent=2)
