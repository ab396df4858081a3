"""Product quantization: per-sub-space k-means codebooks, encoding and reconstruction."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .core import EmbeddingMatrix
from .errors import DimensionMismatch, IndivisibleDim, TooFewTrainingVectors, ValidationError
from .similarity import cosine, paired_cosine

logger = logging.getLogger(__name__)

_ENCODE_CHUNK = 4096


@dataclass(frozen=True)
class PQConfig:
    """M sub-vectors, K centroids each, and k-means stopping rules."""

    m: int
    k: int
    iters: int = 25
    tol: float = 1e-4
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValidationError(f"M must be >= 1, got {self.m}")
        if not 1 <= self.k <= 65536:
            raise ValidationError(f"K must be in [1, 65536], got {self.k}")
        if self.iters < 0:
            raise ValidationError("iters must be non-negative")

    @property
    def code_dtype(self) -> np.dtype:
        return np.dtype(np.uint8) if self.k <= 256 else np.dtype(np.uint16)

    @property
    def label(self) -> str:
        return f"PQ[{self.m}, {self.k}]"


@dataclass(frozen=True)
class PQCodebook:
    config: PQConfig
    centroids: np.ndarray  # (M, K, d/M) float32
    inertia_history: tuple = field(default=(), compare=False)

    @property
    def dim(self) -> int:
        return self.centroids.shape[0] * self.centroids.shape[2]

    @property
    def sub_dim(self) -> int:
        return self.centroids.shape[2]


@dataclass(frozen=True)
class PQCodes:
    codes: np.ndarray  # (n, M) centroid indices
    ids: np.ndarray

    @property
    def n(self) -> int:
        return self.codes.shape[0]


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Squared Euclidean distances ``(n, K)``; clamped at zero."""
    d = (x * x).sum(axis=1)[:, None] - 2.0 * (x @ c.T) + (c * c).sum(axis=1)[None, :]
    return np.maximum(d, 0.0)


def _kmeans_pp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen[0]][None, :])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every point coincides with a chosen centre; pick any unused row
            unused = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(unused))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[idx][None, :])[:, 0])
    return x[chosen].copy()


def kmeans(
    x: np.ndarray, k: int, iters: int, tol: float, rng: np.random.Generator
) -> tuple[np.ndarray, list[float]]:
    """Lloyd's k-means with k-means++ seeding.

    Returns the centroids and the inertia measured after every assignment
    step. Empty clusters are reseeded to the point farthest from its own
    centroid.
    """
    x = np.asarray(x, dtype=np.float64)
    centroids = _kmeans_pp(x, k, rng)
    history: list[float] = []
    for _ in range(max(iters, 1)):
        dists = _sq_dists(x, centroids)
        labels = dists.argmin(axis=1)
        own = dists[np.arange(x.shape[0]), labels]
        inertia = float(own.sum())
        history.append(inertia)
        if len(history) > 1:
            prev = history[-2]
            if prev == 0 or (prev - inertia) / prev < tol:
                break
        if inertia == 0 or len(history) >= iters:
            break
        counts = np.bincount(labels, minlength=k)
        sums = np.zeros_like(centroids)
        np.add.at(sums, labels, x)
        nonempty = counts > 0
        centroids[nonempty] = sums[nonempty] / counts[nonempty, None]
        taken: set[int] = set()
        for j in np.flatnonzero(~nonempty):
            far = own.copy()
            far[list(taken)] = -1.0
            idx = int(far.argmax())
            taken.add(idx)
            centroids[j] = x[idx]
            own[idx] = 0.0
    return centroids, history


def pq_fit(train: EmbeddingMatrix, cfg: PQConfig, threads: int | None = None) -> PQCodebook:
    """Train one k-means codebook per sub-space of ``train``."""
    d = train.dim
    if d % cfg.m:
        raise IndivisibleDim(f"dimension {d} is not divisible by M={cfg.m}")
    if train.n < cfg.k:
        raise TooFewTrainingVectors(f"{train.n} training vectors for K={cfg.k}")
    sub = d // cfg.m
    seeds = np.random.SeedSequence(cfg.seed).spawn(cfg.m)
    data = train.data.astype(np.float64)

    def fit_one(j: int):
        rng = np.random.Generator(np.random.PCG64(seeds[j]))
        return kmeans(data[:, j * sub : (j + 1) * sub], cfg.k, cfg.iters, cfg.tol, rng)

    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            fitted = list(pool.map(fit_one, range(cfg.m)))
    else:
        fitted = [fit_one(j) for j in range(cfg.m)]
    centroids = np.stack([c for c, _ in fitted]).astype(np.float32)
    logger.info("trained %s on %d vectors", cfg.label, train.n)
    return PQCodebook(cfg, centroids, tuple(tuple(h) for _, h in fitted))


def pq_encode(x: EmbeddingMatrix, cb: PQCodebook) -> PQCodes:
    """Nearest centroid per sub-vector; ties go to the lowest index."""
    if x.dim != cb.dim:
        raise DimensionMismatch(f"vector dim {x.dim} != codebook dim {cb.dim}")
    m, sub = cb.config.m, cb.sub_dim
    codes = np.empty((x.n, m), dtype=cb.config.code_dtype)
    cents = cb.centroids.astype(np.float64)
    for start in range(0, x.n, _ENCODE_CHUNK):
        block = x.data[start : start + _ENCODE_CHUNK].astype(np.float64)
        for j in range(m):
            dists = _sq_dists(block[:, j * sub : (j + 1) * sub], cents[j])
            codes[start : start + block.shape[0], j] = dists.argmin(axis=1)
    return PQCodes(codes, x.ids.copy())


def pq_reconstruct(codes: PQCodes, cb: PQCodebook) -> EmbeddingMatrix:
    """Concatenate the assigned centroids of every row."""
    if codes.codes.shape[1] != cb.config.m:
        raise DimensionMismatch(f"codes have {codes.codes.shape[1]} sub-vectors, codebook {cb.config.m}")
    m = cb.config.m
    parts = [cb.centroids[j][codes.codes[:, j].astype(np.intp)] for j in range(m)]
    data = np.concatenate(parts, axis=1) if parts else np.zeros((codes.n, 0), np.float32)
    return EmbeddingMatrix(data.reshape(codes.n, cb.dim), codes.ids)


def _decode_row(code_row: np.ndarray, cb: PQCodebook) -> np.ndarray:
    return np.concatenate([cb.centroids[j][int(c)] for j, c in enumerate(code_row)])


def pq_cosine(a_codes: np.ndarray, b_codes: np.ndarray, cb: PQCodebook) -> float:
    """Cosine between the reconstructions of two code rows."""
    return cosine(_decode_row(np.asarray(a_codes), cb), _decode_row(np.asarray(b_codes), cb))


def pq_pair_cosines(a: PQCodes, b: PQCodes, cb: PQCodebook) -> np.ndarray:
    """Row-aligned cosines ``cos(rec(a_i), rec(b_i))``."""
    ra = pq_reconstruct(a, cb).data.astype(np.float64)
    rb = pq_reconstruct(b, cb).data.astype(np.float64)
    return paired_cosine(ra, rb)


__all__ = [
    "PQCodebook",
    "PQCodes",
    "PQConfig",
    "kmeans",
    "pq_cosine",
    "pq_encode",
    "pq_fit",
    "pq_pair_cosines",
    "pq_reconstruct",
]
