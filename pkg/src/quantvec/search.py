"""Exact brute-force top-k cosine retrieval over float matrices and quantized stores."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .core import EmbeddingMatrix, Kind
from .errors import DimensionMismatch, DTypeMismatch, EmptyInput, ValidationError
from .quantize import QuantizedStore, ScaleDenominator, bf16_bits_to_f32, f32_to_bf16_bits, quantize_store
from .similarity import code_norms, pairwise_cosine, pairwise_cosine_codes, pairwise_cosine_mixed

# Row-range partition of the database; fixed so results never depend on thread count.
CHUNK_ROWS = 8192


@dataclass(frozen=True)
class TopKResult:
    """Hits for one query, best first; equal scores are ordered by ascending id."""

    query_id: int
    ids: np.ndarray
    scores: np.ndarray

    @property
    def hits(self) -> list[tuple[int, float]]:
        return [(int(i), float(s)) for i, s in zip(self.ids, self.scores)]

    def __len__(self) -> int:
        return self.ids.shape[0]


def _best_k(scores: np.ndarray, ids: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    if scores.shape[0] > k:
        # keep everything tied with the k-th score so the id tie-break sees all of them
        kth = -np.partition(-scores, k - 1)[k - 1]
        keep = scores >= kth
        scores, ids = scores[keep], ids[keep]
    order = np.lexsort((ids, -scores))[:k]
    return ids[order], scores[order]


ScoreFn = Callable[[slice], np.ndarray]


def _topk(
    score_rows: ScoreFn,
    db_ids: np.ndarray,
    query_ids: np.ndarray,
    k: int,
    threads: int | None,
) -> list[TopKResult]:
    if k < 1:
        raise ValidationError(f"k must be >= 1, got {k}")
    n_db, n_q = db_ids.shape[0], query_ids.shape[0]
    chunks = [slice(s, min(s + CHUNK_ROWS, n_db)) for s in range(0, n_db, CHUNK_ROWS)]

    def run(rows: slice):
        scores = score_rows(rows)
        ids = db_ids[rows]
        return [_best_k(scores[j], ids, k) for j in range(n_q)]

    if threads is not None and threads > 1 and len(chunks) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partial = list(pool.map(run, chunks))
    else:
        partial = [run(c) for c in chunks]

    results = []
    for j in range(n_q):
        if partial:
            ids = np.concatenate([p[j][0] for p in partial])
            scores = np.concatenate([p[j][1] for p in partial])
            ids, scores = _best_k(scores, ids, k)
        else:
            ids, scores = np.zeros(0, np.uint64), np.zeros(0)
        results.append(TopKResult(int(query_ids[j]), ids, scores))
    return results


def knn_float(
    queries: EmbeddingMatrix, db: EmbeddingMatrix, k: int, threads: int | None = None
) -> list[TopKResult]:
    """Exact top-``k`` cosine neighbours of each query in ``db``."""
    if queries.dim != db.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != db dim {db.dim}")
    q = queries.data.astype(np.float64)
    return _topk(lambda rows: pairwise_cosine(q, db.data[rows]), db.ids, queries.ids, k, threads)


def knn_quantized(
    queries: EmbeddingMatrix | QuantizedStore,
    db: QuantizedStore,
    k: int,
    quantize_queries: bool = True,
    threads: int | None = None,
    scale_denominator: ScaleDenominator = "symmetric",
) -> list[TopKResult]:
    """Exact top-``k`` under cosine on the quantized database.

    With ``quantize_queries`` the queries are encoded with the database dtype
    and both sides are scored on integer codes. Otherwise full-precision
    queries are scored against the dequantized database (mixed precision).
    A :class:`QuantizedStore` of queries must share ``db``'s dtype.
    """
    if queries.dim != db.dim:
        raise DimensionMismatch(f"query dim {queries.dim} != db dim {db.dim}")
    if db.n == 0:
        raise EmptyInput("database is empty")
    dt = db.dt
    if isinstance(queries, QuantizedStore):
        if queries.dt != dt:
            raise DTypeMismatch(f"query dtype {queries.dt} != db dtype {dt}")
        qstore = queries
    elif quantize_queries and dt.is_integer:
        qstore = quantize_store(queries, dt, scale_denominator)
    else:
        qstore = None

    if dt.kind in (Kind.FP32, Kind.BF16):
        if qstore is not None:
            q = qstore.decode_rows()
        elif dt.kind == Kind.BF16 and quantize_queries:
            q = bf16_bits_to_f32(f32_to_bf16_bits(queries.data)).astype(np.float64)
        else:
            q = queries.data.astype(np.float64)
        if dt.kind == Kind.FP32:
            score = lambda rows: pairwise_cosine(q, db.codes[rows])  # noqa: E731
        else:
            score = lambda rows: pairwise_cosine(q, db.decode_rows(rows))  # noqa: E731
        return _topk(score, db.ids, queries.ids, k, threads)

    g = dt.effective_group(db.dim)
    if qstore is not None:
        qc, qs = qstore.int_codes(), qstore.scales
        qn = code_norms(qc, qs, g)

        def score(rows):
            return pairwise_cosine_codes(qc, qs, db.int_codes(rows), db.scales[rows], g, norms_a=qn)
    else:
        q = queries.data.astype(np.float64)

        def score(rows):
            return pairwise_cosine_mixed(q, db.int_codes(rows), db.scales[rows], g)

    return _topk(score, db.ids, queries.ids, k, threads)
