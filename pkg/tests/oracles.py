"""Slow, independent reference implementations used only by the tests."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def round_half_away_exact(q: Fraction) -> int:
    n = math.floor(abs(q) + Fraction(1, 2))
    return n if q >= 0 else -n


def quantize_exact(values, bits: int, scale: float | Fraction) -> list[int]:
    """Codes for ``values`` under ``scale`` using exact rational arithmetic."""
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    s = Fraction(scale)
    return [max(lo, min(hi, round_half_away_exact(Fraction(float(v)) / s))) for v in values]


def scale_f32(values, bits: int) -> float:
    amax = max(abs(float(np.float32(v))) for v in values)
    if amax == 0:
        return 1.0
    return float(np.float32(amax / (2 ** (bits - 1) - 1)))


def naive_cosine(p, q) -> float:
    dot = sum(float(a) * float(b) for a, b in zip(p, q))
    np_ = math.sqrt(sum(float(a) ** 2 for a in p))
    nq = math.sqrt(sum(float(b) ** 2 for b in q))
    if np_ == 0 or nq == 0:
        return 0.0
    return dot / (np_ * nq)


def naive_knn(queries: np.ndarray, db: np.ndarray, db_ids, k: int) -> list[list[int]]:
    """Double loop over queries and rows; ties broken by ascending id."""
    out = []
    for q in queries:
        scored = [(naive_cosine(q, row), int(i)) for row, i in zip(db, db_ids)]
        scored.sort(key=lambda t: (-t[0], t[1]))
        out.append([i for _, i in scored[:k]])
    return out


def bf16_reference(x) -> np.ndarray:
    """FP32 -> BF16 -> FP32 through torch's round-to-nearest-even cast."""
    import torch

    t = torch.tensor(np.asarray(x, dtype=np.float32))
    return t.to(torch.bfloat16).to(torch.float32).numpy()


def unit_gaussian(rng: np.random.Generator, n: int, d: int) -> np.ndarray:
    x = rng.standard_normal((n, d))
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)


def clustered_embeddings(
    rng: np.random.Generator,
    n: int,
    d: int = 1536,
    clusters: int = 20,
    spread: float = 1.0,
    outlier_frac: float = 0.01,
    outlier_scale: float = 8.0,
) -> np.ndarray:
    """Unit-normalised Gaussian mixture with a few high-variance dimensions.

    Mimics two traits of text embeddings that matter for quantization: local
    neighbourhoods that are dense, and a small set of large-magnitude channels.
    """
    std = np.ones(d)
    std[rng.choice(d, int(outlier_frac * d), replace=False)] = outlier_scale
    centers = rng.standard_normal((clusters, d))
    labels = rng.integers(clusters, size=n)
    x = (centers[labels] + spread * rng.standard_normal((n, d))) * std
    return (x / np.linalg.norm(x, axis=1, keepdims=True)).astype(np.float32)
