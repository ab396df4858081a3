"""Distance and statistics kernels.

Batched cosine scoring comes in three flavours:

* float x float (:func:`pairwise_cosine`),
* quantized x quantized (:func:`pairwise_cosine_codes`), which works on integer
  codes group by group and never materialises dequantized vectors,
* float x quantized (:func:`pairwise_cosine_mixed`).

Integer group dots are exact: codes are at most 2^7 in magnitude, so every
partial sum stays far below 2^53 and float64 BLAS gives the same value as a
64-bit integer accumulator. Groups are then combined sequentially in index
order, which keeps scores bit-reproducible.
"""

from __future__ import annotations

import math

import numpy as np

from .core import Kind
from .errors import (
    ConstantInput,
    DimensionMismatch,
    DTypeMismatch,
    EmptyInput,
    LengthMismatch,
    ZeroVector,
)
from .quantize import QuantizedStore, QuantizedVector


def _pair(p, q) -> tuple[np.ndarray, np.ndarray]:
    a = np.asarray(p, dtype=np.float64).ravel()
    b = np.asarray(q, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise DimensionMismatch(f"dimension mismatch: {a.size} vs {b.size}")
    return a, b


def euclidean(p, q) -> float:
    a, b = _pair(p, q)
    return float(np.sqrt(np.sum((a - b) ** 2)))


def cosine(p, q) -> float:
    a, b = _pair(p, q)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))


def cosine_quantized(p: QuantizedVector, q: QuantizedVector) -> float:
    """Cosine of the dequantized images of ``p`` and ``q``, computed on codes."""
    if p.dt != q.dt:
        raise DTypeMismatch(f"{p.dt} vs {q.dt}")
    if p.dim != q.dim:
        raise DimensionMismatch(f"dimension mismatch: {p.dim} vs {q.dim}")
    if not p.dt.is_integer:
        return cosine(p.dequantize(), q.dequantize())
    g = p.dt.effective_group(p.dim)
    cp = p.int_codes().astype(np.int64).reshape(-1, g)
    cq = q.int_codes().astype(np.int64).reshape(-1, g)
    sp = p.scales.astype(np.float64)
    sq = q.scales.astype(np.float64)
    pq_dots = (cp * cq).sum(axis=1)
    pp_dots = (cp * cp).sum(axis=1)
    qq_dots = (cq * cq).sum(axis=1)
    dot = pp = qq = 0.0
    for k in range(cp.shape[0]):
        dot += (sp[k] * sq[k]) * float(pq_dots[k])
        pp += (sp[k] * sp[k]) * float(pp_dots[k])
        qq += (sq[k] * sq[k]) * float(qq_dots[k])
    if pp == 0 or qq == 0:
        raise ZeroVector("cosine similarity is undefined for a zero vector")
    return dot / (math.sqrt(pp) * math.sqrt(qq))


def rmse(p, q) -> float:
    a, b = _pair(p, q)
    if a.size == 0:
        raise EmptyInput("rmse of empty inputs")
    return float(np.sqrt(np.mean((a - b) ** 2)))


def pearson(x, y) -> float:
    """Sample Pearson correlation coefficient."""
    a = np.asarray(x, dtype=np.float64).ravel()
    b = np.asarray(y, dtype=np.float64).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"length mismatch: {a.size} vs {b.size}")
    if a.size < 2:
        raise LengthMismatch("pearson needs at least two points")
    da, db = a - a.mean(), b - b.mean()
    sa, sb = np.sqrt(np.dot(da, da)), np.sqrt(np.dot(db, db))
    if sa == 0 or sb == 0:
        raise ConstantInput("pearson correlation of a constant input")
    return float(np.clip(np.dot(da, db) / (sa * sb), -1.0, 1.0))


# --- batched kernels ----------------------------------------------------------


def _safe_div(dot: np.ndarray, na: np.ndarray, nb: np.ndarray) -> np.ndarray:
    # zero-norm rows score 0 rather than NaN so they sink in rankings
    denom = na[:, None] * nb[None, :]
    out = np.zeros_like(dot)
    np.divide(dot, denom, out=out, where=denom > 0)
    return out


def pairwise_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``(m, n)`` cosine matrix between float rows of ``a`` and ``b``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape[1] != b.shape[1]:
        raise DimensionMismatch(f"dimension mismatch: {a.shape[1]} vs {b.shape[1]}")
    na = np.sqrt(np.einsum("ij,ij->i", a, a))
    nb = np.sqrt(np.einsum("ij,ij->i", b, b))
    return _safe_div(a @ b.T, na, nb)


def _grouped(codes: np.ndarray, g: int) -> np.ndarray:
    return codes.astype(np.float64).reshape(codes.shape[0], -1, g)


def code_norms(codes: np.ndarray, scales: np.ndarray, g: int) -> np.ndarray:
    """Euclidean norms of dequantized rows, from integer codes and scales."""
    c = _grouped(codes, g)
    self_dots = np.einsum("ngk,ngk->ng", c, c)
    s = scales.astype(np.float64)
    acc = np.zeros(codes.shape[0])
    for k in range(c.shape[1]):
        acc += (s[:, k] * s[:, k]) * self_dots[:, k]
    return np.sqrt(acc)


def pairwise_cosine_codes(
    codes_a: np.ndarray,
    scales_a: np.ndarray,
    codes_b: np.ndarray,
    scales_b: np.ndarray,
    g: int,
    norms_a: np.ndarray | None = None,
    norms_b: np.ndarray | None = None,
) -> np.ndarray:
    """Cosine matrix between two sets of integer-coded rows sharing group size ``g``."""
    ca, cb = _grouped(codes_a, g), _grouped(codes_b, g)
    sa, sb = scales_a.astype(np.float64), scales_b.astype(np.float64)
    dot = np.zeros((ca.shape[0], cb.shape[0]))
    for k in range(ca.shape[1]):
        dot += (sa[:, k, None] * sb[None, :, k]) * (ca[:, k, :] @ cb[:, k, :].T)
    if norms_a is None:
        norms_a = code_norms(codes_a, scales_a, g)
    if norms_b is None:
        norms_b = code_norms(codes_b, scales_b, g)
    return _safe_div(dot, norms_a, norms_b)


def pairwise_cosine_mixed(
    q: np.ndarray,
    codes_b: np.ndarray,
    scales_b: np.ndarray,
    g: int,
    norms_b: np.ndarray | None = None,
) -> np.ndarray:
    """Cosine between float queries and integer-coded rows: sum_g S_g * (q_g . c_g)."""
    q = np.asarray(q, dtype=np.float64)
    qg = q.reshape(q.shape[0], -1, g)
    cb = _grouped(codes_b, g)
    sb = scales_b.astype(np.float64)
    dot = np.zeros((q.shape[0], cb.shape[0]))
    for k in range(cb.shape[1]):
        dot += sb[None, :, k] * (qg[:, k, :] @ cb[:, k, :].T)
    if norms_b is None:
        norms_b = code_norms(codes_b, scales_b, g)
    nq = np.sqrt(np.einsum("ij,ij->i", q, q))
    return _safe_div(dot, nq, norms_b)


def store_pairwise_cosine(a: QuantizedStore, b: QuantizedStore) -> np.ndarray:
    """Cosine matrix between every row of ``a`` and every row of ``b``."""
    if a.dt != b.dt:
        raise DTypeMismatch(f"{a.dt} vs {b.dt}")
    if a.dim != b.dim:
        raise DimensionMismatch(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.dt.kind in (Kind.FP32, Kind.BF16):
        return pairwise_cosine(a.decode_rows(), b.decode_rows())
    g = a.dt.effective_group(a.dim)
    return pairwise_cosine_codes(a.int_codes(), a.scales, b.int_codes(), b.scales, g)


def paired_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-aligned cosines ``cos(a_i, b_i)``; zero rows give 0."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionMismatch(f"shape mismatch: {a.shape} vs {b.shape}")
    dot = np.einsum("ij,ij->i", a, b)
    denom = np.sqrt(np.einsum("ij,ij->i", a, a)) * np.sqrt(np.einsum("ij,ij->i", b, b))
    out = np.zeros_like(dot)
    np.divide(dot, denom, out=out, where=denom > 0)
    return out


def store_paired_cosine(a: QuantizedStore, b: QuantizedStore) -> np.ndarray:
    """Row-aligned cosines between two equally sized stores of one dtype."""
    if a.dt != b.dt:
        raise DTypeMismatch(f"{a.dt} vs {b.dt}")
    if a.n != b.n or a.dim != b.dim:
        raise DimensionMismatch(f"stores differ in shape: {(a.n, a.dim)} vs {(b.n, b.dim)}")
    if not a.dt.is_integer:
        return paired_cosine(a.decode_rows(), b.decode_rows())
    g = a.dt.effective_group(a.dim)
    ca, cb = _grouped(a.int_codes(), g), _grouped(b.int_codes(), g)
    sa, sb = a.scales.astype(np.float64), b.scales.astype(np.float64)
    ab = np.einsum("ngk,ngk->ng", ca, cb)
    dot = np.zeros(a.n)
    for k in range(ca.shape[1]):
        dot += (sa[:, k] * sb[:, k]) * ab[:, k]
    denom = code_norms(a.int_codes(), a.scales, g) * code_norms(b.int_codes(), b.scales, g)
    out = np.zeros_like(dot)
    np.divide(dot, denom, out=out, where=denom > 0)
    return out
