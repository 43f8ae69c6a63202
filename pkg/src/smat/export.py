"""Write the per-stage search-region query maps captured while tracking."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from . import io
from .backbone import StageTrace


def normalize_map(m: np.ndarray) -> np.ndarray:
    """Min-max scale to ``[0, 1]``; a constant map becomes all zeros."""
    m = np.asarray(m, dtype=np.float64)
    lo, hi = m.min(), m.max()
    if hi - lo <= 0:
        return np.zeros_like(m)
    return (m - lo) / (hi - lo)


def export_attention_maps(traces: list[StageTrace], out_dir: str | Path, prefix: str = "") -> list[Path]:
    """One ``stage{i}.pgm`` and ``stage{i}.csv`` per captured ViT stage.

    The softmaxed query weights of the search tokens are reshaped to the
    search grid (32x32 and 16x16 for the default model) and min-max
    normalised. Returns the written paths.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for tr in traces:
        m = np.asarray(tr.search_map)
        while m.ndim > 2:
            m = m[0]
        norm = normalize_map(m)
        stem = out / f"{prefix}stage{tr.stage + 1}"
        io.write_pgm(stem.with_suffix(".pgm"), np.rint(norm * 255).astype(np.uint8))
        np.savetxt(stem.with_suffix(".csv"), norm, delimiter=",", fmt="%.9g")
        written += [stem.with_suffix(".pgm"), stem.with_suffix(".csv")]
    return written


def load_attention_csv(path: str | Path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
