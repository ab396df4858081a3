"""Experiment harness: pairwise cosine RMSE, retrieval overlap and STS correlation."""

from __future__ import annotations

import datetime as _dt
import logging
import math
import os
import re
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .core import DType, EmbeddingMatrix, Kind, WHOLE_VECTOR, dtype_parse, make_rng, render_dtype
from .errors import InsufficientCandidates, LengthMismatch, MalformedDType, SampleTooLarge, ValidationError
from .io import DatasetManifest, split
from .pq import PQConfig, pq_encode, pq_fit, pq_pair_cosines, pq_reconstruct
from .quantize import ScaleDenominator, quantize_store
from .report import EvalReport, Experiment, ReportRow
from .search import TopKResult, knn_float, knn_quantized
from .similarity import paired_cosine, pairwise_cosine, pearson, rmse, store_pairwise_cosine, store_paired_cosine

logger = logging.getLogger(__name__)

HIST_BINS = 100

DEFAULT_DTYPES = ("bf16", "int8", "int4:32", "int4:64", "int4:128", "int4:256")


@dataclass(frozen=True)
class Method:
    """A scalar dtype or a product-quantization configuration."""

    dt: DType | None = None
    pq: tuple[int, int] | None = None

    @property
    def spec(self) -> str:
        if self.pq is not None:
            return f"pq:{self.pq[0]}:{self.pq[1]}"
        return render_dtype(self.dt)

    @property
    def label(self) -> str:
        if self.pq is not None:
            return f"PQ[{self.pq[0]}, {self.pq[1]}]"
        return self.dt.kind.name.capitalize()

    @property
    def group(self) -> str:
        if self.dt is None or not self.dt.is_integer or self.dt.group_size == WHOLE_VECTOR:
            return ""
        return str(self.dt.group_size)

    def precision_key(self) -> tuple:
        """Sort key that puts more precise methods first."""
        if self.pq is not None:
            m, k = self.pq
            return (len(Kind), -m * math.log2(max(k, 2)), -m, 0)
        g = self.dt.group_size or math.inf
        return (int(self.dt.kind), 0, 0, g)


_PQ_RE = re.compile(r"^pq:(\d+):(\d+)$")


def parse_method(text: str) -> Method:
    """``fp32 | bf16 | int8[:g] | int4:g | pq:M:K``."""
    m = _PQ_RE.match(text.strip().lower())
    if m:
        return Method(pq=(int(m.group(1)), int(m.group(2))))
    if text.strip().lower().startswith("pq"):
        raise MalformedDType(f"PQ methods are written pq:M:K, got {text!r}")
    return Method(dt=dtype_parse(text))


def _methods(items: Iterable[str | DType | Method]) -> list[Method]:
    out = []
    for it in items:
        if isinstance(it, Method):
            out.append(it)
        elif isinstance(it, DType):
            out.append(Method(dt=it))
        else:
            out.append(parse_method(it))
    return out


def _timestamp() -> str:
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    when = (
        _dt.datetime.fromtimestamp(int(epoch), _dt.timezone.utc)
        if epoch
        else _dt.datetime.now(_dt.timezone.utc)
    )
    return when.replace(microsecond=0).isoformat()


def _base_metadata(seed: int, manifest: DatasetManifest | None, **extra) -> dict:
    meta = {"seed": seed, "created": _timestamp()}
    if manifest is not None:
        meta["dataset_checksum"] = manifest.checksum
        meta["dataset_sources"] = list(manifest.sources)
    meta.update(extra)
    return meta


# --- experiment 1: pairwise cosine RMSE -----------------------------------------


def upper_pairs(cos: np.ndarray) -> np.ndarray:
    """Values of a square matrix above the diagonal, row-major."""
    return cos[np.triu_indices(cos.shape[0], k=1)]


def eval_pairwise_rmse(
    db: EmbeddingMatrix,
    dtypes: Sequence[str | DType],
    sample_n: int = 1000,
    seed: int = 0,
    scale_denominator: ScaleDenominator = "symmetric",
    manifest: DatasetManifest | None = None,
) -> EvalReport:
    """RMSE between quantized and full-precision cosines over all sample pairs.

    Draws ``sample_n`` rows without replacement, computes the FP32 cosine of
    every unordered pair as the baseline, and for each dtype the cosine of the
    same pairs after quantizing both sides. Also records 100-bin histograms
    over [-1, 1] of every set of pair cosines.
    """
    if sample_n > db.n:
        raise SampleTooLarge(f"sample of {sample_n} from {db.n} vectors")
    if sample_n < 2:
        raise ValidationError("sample_n must be at least 2")
    methods = sorted(_methods(dtypes), key=Method.precision_key)
    if any(m.pq is not None for m in methods):
        raise ValidationError("pairwise RMSE takes scalar dtypes only")
    rng = make_rng(seed)
    sample = db.take(rng.choice(db.n, size=sample_n, replace=False))
    baseline = upper_pairs(pairwise_cosine(sample.data, sample.data))
    edges = np.linspace(-1.0, 1.0, HIST_BINS + 1)
    hist = {"fp32": np.histogram(baseline, bins=edges)[0].tolist()}
    rows = []
    for m in methods:
        store = quantize_store(sample, m.dt, scale_denominator)
        vals = upper_pairs(store_pairwise_cosine(store, store))
        hist[m.spec] = np.histogram(vals, bins=edges)[0].tolist()
        rows.append(ReportRow(m.spec, m.label, m.group, rmse(vals, baseline), 0.0, None))
        logger.info("rmse %s = %.6g", m.spec, rows[-1].value)
    meta = _base_metadata(
        seed,
        manifest,
        sample_n=sample_n,
        n_pairs=int(baseline.size),
        scale_denominator=scale_denominator,
        sample_ids=[int(i) for i in sample.ids],
    )
    return EvalReport(
        Experiment.RMSE_PAIRWISE,
        rows,
        meta,
        {"bin_edges": edges.tolist(), "counts": hist},
    )


# --- experiment 2: retrieval overlap --------------------------------------------

_SCAN_BLOCK = 4096


def _unit_rows(x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    out = np.zeros_like(x)
    np.divide(x, norms[:, None], out=out, where=norms[:, None] > 0)
    return out, norms


def select_orthogonal_queries(
    pool: EmbeddingMatrix, count: int, max_abs_cos: float, rng: np.random.Generator
) -> EmbeddingMatrix:
    """Greedily pick ``count`` rows whose pairwise |cosine| is below ``max_abs_cos``.

    Candidates are scanned in an ``rng``-shuffled order; a candidate is kept
    when it is nearly orthogonal to every row kept so far.
    """
    if count < 1:
        raise ValidationError(f"count must be >= 1, got {count}")
    if not 0 < max_abs_cos <= 1:
        raise ValidationError(f"max_abs_cos must be in (0, 1], got {max_abs_cos}")
    order = rng.permutation(pool.n)
    accepted: list[int] = []
    kept = np.zeros((0, pool.dim))
    for start in range(0, pool.n, _SCAN_BLOCK):
        rows = order[start : start + _SCAN_BLOCK]
        unit, norms = _unit_rows(pool.data[rows])
        ok = norms > 0
        if kept.shape[0]:
            ok &= (np.abs(unit @ kept.T) < max_abs_cos).all(axis=1)
        for j in np.flatnonzero(ok):
            if kept.shape[0] and not (np.abs(kept @ unit[j]) < max_abs_cos).all():
                continue
            accepted.append(int(rows[j]))
            kept = np.vstack([kept, unit[j]])
            if len(accepted) == count:
                break
        if len(accepted) == count:
            break
    if len(accepted) < count:
        raise InsufficientCandidates(
            f"found only {len(accepted)} of {count} vectors with pairwise |cos| < {max_abs_cos}"
        )
    chosen = pool.take(accepted)
    cos = pairwise_cosine(chosen.data, chosen.data)
    off_diag = np.abs(cos[~np.eye(count, dtype=bool)])
    assert (off_diag < max_abs_cos).all(), "selected queries are not nearly orthogonal"
    return chosen


def overlap_counts(baseline: Sequence[TopKResult], other: Sequence[TopKResult]) -> list[int]:
    """Per-query number of ids shared by two result lists."""
    return [
        len(set(b.ids.tolist()) & set(o.ids.tolist())) for b, o in zip(baseline, other, strict=True)
    ]


def _pq_search(
    queries: EmbeddingMatrix,
    db: EmbeddingMatrix,
    cfg: PQConfig,
    k: int,
    quantize_queries: bool,
    threads: int | None,
) -> list[TopKResult]:
    cb = pq_fit(db, cfg, threads=threads)
    rec = pq_reconstruct(pq_encode(db, cb), cb)
    q = pq_reconstruct(pq_encode(queries, cb), cb) if quantize_queries else queries
    return knn_float(q, rec, k, threads=threads)


def eval_retrieval_overlap(
    db_pool: EmbeddingMatrix,
    split_sizes: tuple[int, int],
    methods: Sequence[str | DType | Method],
    k: int = 10,
    n_queries: int = 10,
    seed: int = 0,
    max_abs_cos: float = 0.1,
    quantize_queries: bool = True,
    scale_denominator: ScaleDenominator = "symmetric",
    pq_iters: int = 25,
    pq_tol: float = 1e-4,
    threads: int | None = None,
    manifest: DatasetManifest | None = None,
    reference_hnsw_accuracy: float | None = None,
) -> EvalReport:
    """Top-k overlap between full-precision and quantized retrieval.

    The pool is permuted and split into a query side and a search side;
    ``n_queries`` nearly orthogonal queries are drawn from the query side.
    Accuracy is the number of baseline hits recovered, summed over queries,
    divided by ``k * n_queries``. PQ codebooks are trained on the search side.
    """
    rng = make_rng(seed)
    train, test = split(db_pool, split_sizes, rng)
    if test.n == 0:
        raise ValidationError("search side of the split is empty")
    queries = select_orthogonal_queries(train, n_queries, max_abs_cos, rng)
    baseline = knn_float(queries, test, k, threads=threads)
    hits_per_query = min(k, test.n)
    all_ids = np.concatenate([b.ids for b in baseline])
    disjoint = np.unique(all_ids).size == all_ids.size
    if not disjoint:
        logger.warning("baseline top-%d lists overlap across queries; overlap is still counted per query", k)

    rows = []
    per_query = {}
    for m in sorted(_methods(methods), key=Method.precision_key):
        if m.pq is not None:
            cfg = PQConfig(m.pq[0], m.pq[1], iters=pq_iters, tol=pq_tol, seed=seed)
            found = _pq_search(queries, test, cfg, k, quantize_queries, threads)
        else:
            store = quantize_store(test, m.dt, scale_denominator)
            found = knn_quantized(
                queries, store, k, quantize_queries=quantize_queries,
                threads=threads, scale_denominator=scale_denominator,
            )
        counts = overlap_counts(baseline, found)
        per_query[m.spec] = counts
        acc = sum(counts) / (hits_per_query * len(baseline))
        rows.append(ReportRow(m.spec, m.label, m.group, acc, 1.0, acc))
        logger.info("overlap %s = %.4f", m.spec, acc)

    meta = _base_metadata(
        seed,
        manifest,
        split_sizes=list(split_sizes),
        k=k,
        n_queries=n_queries,
        max_abs_cos=max_abs_cos,
        quantize_queries=quantize_queries,
        scale_denominator=scale_denominator,
        query_ids=[int(i) for i in queries.ids],
        baseline_ids=[[int(i) for i in b.ids] for b in baseline],
        baseline_disjoint=bool(disjoint),
        per_query_overlap=per_query,
    )
    if reference_hnsw_accuracy is not None:
        meta["reference_hnsw_accuracy"] = reference_hnsw_accuracy
    return EvalReport(Experiment.RETRIEVAL_OVERLAP, rows, meta)


# --- experiment 3: STS correlation ----------------------------------------------


def eval_sts(
    pairs_a: EmbeddingMatrix,
    pairs_b: EmbeddingMatrix,
    gold,
    methods: Sequence[str | DType | Method],
    seed: int = 0,
    train_fraction: float = 0.5,
    dataset: str = "",
    scale_denominator: ScaleDenominator = "symmetric",
    pq_iters: int = 25,
    pq_tol: float = 1e-4,
    threads: int | None = None,
) -> EvalReport:
    """Pearson correlation between pair cosines and gold relatedness scores.

    Pairs are split with ``seed`` into a train part (used only to fit PQ
    codebooks, on both sentences of every train pair) and a test part on
    which every method is scored. An FP32 row is always included and is the
    denominator of every ratio.
    """
    gold = np.asarray(gold, dtype=np.float64).ravel()
    if not pairs_a.n == pairs_b.n == gold.size:
        raise LengthMismatch(f"{pairs_a.n} / {pairs_b.n} pairs for {gold.size} gold scores")
    if pairs_a.dim != pairs_b.dim:
        raise LengthMismatch(f"pair sides differ in dimension: {pairs_a.dim} vs {pairs_b.dim}")
    if not 0 < train_fraction < 1:
        raise ValidationError("train_fraction must be in (0, 1)")
    rng = make_rng(seed)
    perm = rng.permutation(gold.size)
    n_train = int(round(gold.size * train_fraction))
    tr, te = perm[:n_train], perm[n_train:]
    if te.size < 2:
        raise ValidationError("test split needs at least two pairs")
    a_te, b_te, gold_te = pairs_a.take(te), pairs_b.take(te), gold[te]
    train_both = np.concatenate([pairs_a.data[tr], pairs_b.data[tr]])

    methods_ = _methods(methods)
    if not any(m.dt is not None and m.dt.kind == Kind.FP32 for m in methods_):
        methods_.insert(0, Method(dt=DType(Kind.FP32)))
    base = pearson(paired_cosine(a_te.data, b_te.data), gold_te)
    rows = []
    for m in sorted(methods_, key=Method.precision_key):
        if m.pq is not None:
            cfg = PQConfig(m.pq[0], m.pq[1], iters=pq_iters, tol=pq_tol, seed=seed)
            cb = pq_fit(EmbeddingMatrix(train_both), cfg, threads=threads)
            cos = pq_pair_cosines(pq_encode(a_te, cb), pq_encode(b_te, cb), cb)
        else:
            sa = quantize_store(a_te, m.dt, scale_denominator)
            sb = quantize_store(b_te, m.dt, scale_denominator)
            cos = store_paired_cosine(sa, sb)
        r = pearson(cos, gold_te)
        rows.append(ReportRow(m.spec, m.label, m.group, r, base, r / base if base else None, dataset))
        logger.info("sts %s %s = %.4f", dataset, m.spec, r)
    meta = _base_metadata(
        seed,
        None,
        dataset=dataset,
        n_pairs=int(gold.size),
        n_train=int(tr.size),
        n_test=int(te.size),
        train_fraction=train_fraction,
        scale_denominator=scale_denominator,
    )
    return EvalReport(Experiment.STS_CORRELATION, rows, meta)
