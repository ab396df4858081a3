"""Dataset ingestion, manifests, splits and bit-exact binary containers.

Store file (``QVST``), all fields little-endian::

    magic     4s   b"QVST"
    version   u16  1
    kind      u8   0=fp32 1=bf16 2=int8 3=int4
    bits      u8
    dim       u32
    count     u64
    group     u32  0 = one scale per vector
    checksum  u64  FNV-1a 64 over ids + scales + codes blocks
    ids       count * u64
    scales    count * n_groups * f32   (row-major, empty for fp32/bf16)
    codes     count * code_bytes       (f32 / bf16 bits u16 / i8 / packed nibbles)

PQ codebook (``PQCB``) and PQ codes (``PQCD``) containers follow the same
conventions; see :func:`save_codebook` and :func:`save_pq_codes`.
"""

from __future__ import annotations

import csv
import enum
import json
import math
import os
import struct
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .core import DType, EmbeddingMatrix, Kind
from .errors import (
    BadMagic,
    ChecksumMismatch,
    CorruptFile,
    DimMismatch,
    NonFiniteValue,
    ParseError,
    QuantVecError,
    SizesExceedCount,
    TruncatedFile,
    ValidationError,
    VersionUnsupported,
)
from .pq import PQCodebook, PQCodes, PQConfig
from .quantize import QuantizedStore

FORMAT_VERSION = 1

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF

try:  # optional accelerator for multi-GB payloads
    import numba

    @numba.njit(cache=True)
    def _fnv1a_kernel(buf, h):  # pragma: no cover - exercised via fnv1a64
        prime = np.uint64(_FNV_PRIME)
        for i in range(buf.shape[0]):
            h = (h ^ np.uint64(buf[i])) * prime
        return h

except ImportError:  # pragma: no cover
    _fnv1a_kernel = None


def fnv1a64_py(data: bytes | bytearray | memoryview, h: int = _FNV_OFFSET) -> int:
    """Reference FNV-1a (64-bit) in pure Python."""
    for b in bytes(data):
        h = ((h ^ b) * _FNV_PRIME) & _MASK64
    return h


def _as_u8(chunk) -> np.ndarray:
    if isinstance(chunk, np.ndarray):
        return np.ascontiguousarray(chunk).view(np.uint8).reshape(-1)
    return np.frombuffer(chunk, dtype=np.uint8)


def fnv1a64(*chunks, h: int = _FNV_OFFSET) -> int:
    """FNV-1a 64 over the concatenation of ``chunks`` (bytes-like or arrays)."""
    for chunk in chunks:
        buf = _as_u8(chunk)
        if _fnv1a_kernel is not None:
            h = int(_fnv1a_kernel(buf, np.uint64(h)))
        else:
            h = fnv1a64_py(buf.tobytes(), h)
    return h


# --- ingestion ----------------------------------------------------------------


class Format(str, enum.Enum):
    RAW_F32LE = "raw"
    JSONL = "jsonl"
    CSV = "csv"

    @classmethod
    def parse(cls, text: str) -> "Format":
        t = text.strip().lower()
        aliases = {"raw": cls.RAW_F32LE, "raw_f32le": cls.RAW_F32LE, "f32": cls.RAW_F32LE,
                   "jsonl": cls.JSONL, "csv": cls.CSV}
        if t not in aliases:
            raise ValidationError(f"unknown input format {text!r}")
        return aliases[t]


@dataclass
class DatasetManifest:
    """Where a matrix came from and how it was split; the reproducibility anchor."""

    sources: list[str]
    dim: int
    count: int
    encoding: str
    checksum: str  # FNV-1a 64 of the raw source bytes, 16 hex digits
    split_seed: int | None = None
    split_sizes: list[int] | None = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "DatasetManifest":
        return cls(**json.loads(text))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "DatasetManifest":
        return cls.from_json(Path(path).read_text())

    def verify(self) -> None:
        """Recompute the source checksum; raise :class:`ChecksumMismatch` on drift."""
        h = _FNV_OFFSET
        for src in self.sources:
            h = fnv1a64(Path(src).read_bytes(), h=h)
        if f"{h:016x}" != self.checksum:
            raise ChecksumMismatch(f"manifest checksum {self.checksum} != recomputed {h:016x}")


def _check_row(values, dim: int, line: int) -> list[float]:
    if len(values) != dim:
        raise DimMismatch(f"expected {dim} values, got {len(values)}", line)
    try:
        row = [float(v) for v in values]
    except (TypeError, ValueError) as exc:
        raise ParseError(f"non-numeric value: {exc}", line) from None
    if not all(math.isfinite(v) for v in row):
        raise NonFiniteValue("NaN or Inf in vector", line)
    return row


def _parse_raw(payload: bytes, dim: int) -> tuple[np.ndarray, None]:
    width = 4 * dim
    if len(payload) % width:
        raise ParseError(f"{len(payload)} bytes is not a whole number of {dim}-dim float32 rows")
    data = np.frombuffer(payload, dtype="<f4").reshape(-1, dim).astype(np.float32)
    bad = ~np.isfinite(data).all(axis=1)
    if bad.any():
        raise NonFiniteValue("NaN or Inf in vector", int(np.flatnonzero(bad)[0]) + 1)
    return data, None


def _parse_jsonl(text: str, dim: int) -> tuple[np.ndarray, list[int] | None]:
    rows, ids = [], []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
        if not isinstance(obj, dict) or not isinstance(obj.get("vector"), list):
            raise ParseError("expected an object with a 'vector' array", lineno)
        rows.append(_check_row(obj["vector"], dim, lineno))
        rid = obj.get("id")
        if rid is not None and (not isinstance(rid, int) or isinstance(rid, bool) or rid < 0):
            raise ParseError(f"id must be a non-negative integer, got {rid!r}", lineno)
        ids.append(rid)
    given = [i is not None for i in ids]
    if any(given) and not all(given):
        raise ParseError("either every line or no line may carry an 'id'")
    data = np.array(rows, dtype=np.float32).reshape(-1, dim)
    return data, (ids if ids and all(given) else None)


def _parse_csv(text: str, dim: int) -> tuple[np.ndarray, list[int] | None]:
    rows, ids = [], []
    has_id = False
    for lineno, rec in enumerate(csv.reader(text.splitlines()), start=1):
        if not rec or all(not c.strip() for c in rec):
            continue
        if lineno == 1 and rec and not _is_number(rec[0]):
            has_id = rec[0].strip().lower() == "id"
            continue
        if has_id:
            try:
                ids.append(int(rec[0]))
            except ValueError:
                raise ParseError(f"bad id {rec[0]!r}", lineno) from None
            rec = rec[1:]
        rows.append(_check_row(rec, dim, lineno))
    data = np.array(rows, dtype=np.float32).reshape(-1, dim)
    return data, (ids if has_id else None)


def _is_number(s: str) -> bool:
    try:
        float(s)
    except ValueError:
        return False
    return True


def ingest(
    path: str | Path, fmt: Format | str, dim: int
) -> tuple[EmbeddingMatrix, DatasetManifest]:
    """Read embeddings from ``path``.

    Formats:
        raw: little-endian float32 rows, no header; ids are row numbers.
        jsonl: one ``{"id": int (optional), "vector": [...]}`` object per line.
        csv: ``dim`` values per row; an optional header whose first column is
            ``id`` makes the first column an id.
    """
    fmt = Format.parse(fmt) if isinstance(fmt, str) else fmt
    if dim <= 0:
        raise ValidationError(f"dim must be positive, got {dim}")
    payload = Path(path).read_bytes()
    if fmt == Format.RAW_F32LE:
        data, ids = _parse_raw(payload, dim)
    else:
        try:
            text = payload.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"not UTF-8 text: {exc}") from None
        data, ids = (_parse_jsonl if fmt == Format.JSONL else _parse_csv)(text, dim)
    matrix = EmbeddingMatrix(data, None if ids is None else np.array(ids, dtype=np.uint64))
    manifest = DatasetManifest(
        sources=[str(path)],
        dim=dim,
        count=matrix.n,
        encoding=fmt.value,
        checksum=f"{fnv1a64(payload):016x}",
    )
    return matrix, manifest


def split(
    m: EmbeddingMatrix, sizes: tuple[int, int], rng: np.random.Generator
) -> tuple[EmbeddingMatrix, EmbeddingMatrix]:
    """Permute rows with ``rng`` and cut the first ``a`` and the next ``b`` rows."""
    a, b = sizes
    if a < 0 or b < 0 or a + b > m.n:
        raise SizesExceedCount(f"split sizes {sizes} exceed {m.n} rows")
    perm = rng.permutation(m.n)
    return m.take(perm[:a]), m.take(perm[a : a + b])


# --- binary containers ----------------------------------------------------------

_STORE_HEADER = struct.Struct("<4sHBBIQIQ")
_CODE_DTYPES = {Kind.FP32: "<f4", Kind.BF16: "<u2", Kind.INT8: "i1", Kind.INT4: "u1"}


def _atomic_write(path: str | Path, parts: list[bytes]) -> int:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            for p in parts:
                fh.write(p)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    return sum(len(p) for p in parts)


def _le(arr: np.ndarray, dtype: str) -> bytes:
    return np.ascontiguousarray(arr, dtype=np.dtype(dtype)).tobytes()


def store_blocks(store: QuantizedStore) -> tuple[bytes, bytes, bytes]:
    """Serialized ``(ids, scales, codes)`` blocks of a store."""
    return (
        _le(store.ids, "<u8"),
        _le(store.scales, "<f4"),
        _le(store.codes, _CODE_DTYPES[store.dt.kind]),
    )


def save_store(store: QuantizedStore, path: str | Path) -> int:
    """Write ``store`` to ``path``; returns the number of bytes written."""
    ids, scales, codes = store_blocks(store)
    header = _STORE_HEADER.pack(
        b"QVST",
        FORMAT_VERSION,
        int(store.dt.kind),
        store.dt.bits,
        store.dim,
        store.n,
        store.dt.group_size,
        fnv1a64(ids, scales, codes),
    )
    return _atomic_write(path, [header, ids, scales, codes])


def _take(buf: memoryview, offset: int, nbytes: int, what: str) -> tuple[memoryview, int]:
    if offset + nbytes > len(buf):
        raise TruncatedFile(f"file ends inside the {what} block")
    return buf[offset : offset + nbytes], offset + nbytes


def load_store(path: str | Path) -> QuantizedStore:
    """Read a ``QVST`` file; the result is bit-identical to what was saved."""
    raw = Path(path).read_bytes()
    buf = memoryview(raw)
    if len(raw) >= 4 and raw[:4] != b"QVST":
        raise BadMagic(f"{path}: not a quantvec store (magic {raw[:4]!r})")
    head, off = _take(buf, 0, _STORE_HEADER.size, "header")
    magic, version, kind, bits, dim, count, group, checksum = _STORE_HEADER.unpack(head)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"store format version {version} (supported: {FORMAT_VERSION})")
    try:
        dt = DType(Kind(kind), group)
        dt.check_dim(dim)
    except (ValueError, QuantVecError) as exc:
        raise CorruptFile(f"bad dtype descriptor in header: {exc}") from None
    if dt.bits != bits:
        raise CorruptFile(f"header bits {bits} disagree with kind {dt.kind.name}")
    n_groups = dt.n_groups(dim)
    ids_b, off = _take(buf, off, 8 * count, "ids")
    scales_b, off = _take(buf, off, 4 * count * n_groups, "scales")
    codes_b, off = _take(buf, off, count * dt.code_bytes(dim), "codes")
    if off != len(raw):
        raise CorruptFile(f"{len(raw) - off} trailing bytes after codes block")
    if fnv1a64(ids_b, scales_b, codes_b) != checksum:
        raise ChecksumMismatch(f"{path}: payload checksum mismatch")
    code_dt = np.dtype(_CODE_DTYPES[dt.kind])
    width = dt.code_bytes(dim) // code_dt.itemsize
    return QuantizedStore(
        dt,
        dim,
        np.frombuffer(codes_b, dtype=code_dt).reshape(count, width).astype(code_dt.newbyteorder("=")),
        np.frombuffer(scales_b, dtype="<f4").reshape(count, n_groups).astype(np.float32),
        np.frombuffer(ids_b, dtype="<u8").astype(np.uint64),
    )


_PQCB_HEADER = struct.Struct("<4sHIIIIdQQ")
_PQCD_HEADER = struct.Struct("<4sHIIQQ")


def save_codebook(cb: PQCodebook, path: str | Path) -> int:
    """Write a ``PQCB`` container: config header then ``M*K*sub`` float32 centroids."""
    cfg = cb.config
    body = _le(cb.centroids, "<f4")
    header = _PQCB_HEADER.pack(
        b"PQCB", FORMAT_VERSION, cfg.m, cfg.k, cb.sub_dim, cfg.iters, cfg.tol, cfg.seed, fnv1a64(body)
    )
    return _atomic_write(path, [header, body])


def load_codebook(path: str | Path) -> PQCodebook:
    raw = Path(path).read_bytes()
    if len(raw) >= 4 and raw[:4] != b"PQCB":
        raise BadMagic(f"{path}: not a PQ codebook")
    buf = memoryview(raw)
    head, off = _take(buf, 0, _PQCB_HEADER.size, "header")
    _, version, m, k, sub, iters, tol, seed, checksum = _PQCB_HEADER.unpack(head)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"codebook format version {version}")
    body, off = _take(buf, off, 4 * m * k * sub, "centroids")
    if off != len(raw):
        raise CorruptFile("trailing bytes after centroids")
    if fnv1a64(body) != checksum:
        raise ChecksumMismatch(f"{path}: codebook checksum mismatch")
    cents = np.frombuffer(body, dtype="<f4").reshape(m, k, sub).astype(np.float32)
    return PQCodebook(PQConfig(m, k, iters, tol, seed), cents)


def save_pq_codes(codes: PQCodes, k: int, path: str | Path) -> int:
    """Write a ``PQCD`` container: header, ids (u64), then ``n*M`` codes (u8, or u16 when K > 256)."""
    m = codes.codes.shape[1]
    ids = _le(codes.ids, "<u8")
    body = _le(codes.codes, "<u1" if k <= 256 else "<u2")
    header = _PQCD_HEADER.pack(b"PQCD", FORMAT_VERSION, m, k, codes.n, fnv1a64(ids, body))
    return _atomic_write(path, [header, ids, body])


def load_pq_codes(path: str | Path) -> tuple[PQCodes, int]:
    raw = Path(path).read_bytes()
    if len(raw) >= 4 and raw[:4] != b"PQCD":
        raise BadMagic(f"{path}: not a PQ codes file")
    buf = memoryview(raw)
    head, off = _take(buf, 0, _PQCD_HEADER.size, "header")
    _, version, m, k, n, checksum = _PQCD_HEADER.unpack(head)
    if version != FORMAT_VERSION:
        raise VersionUnsupported(f"codes format version {version}")
    width = 1 if k <= 256 else 2
    ids_b, off = _take(buf, off, 8 * n, "ids")
    body, off = _take(buf, off, width * n * m, "codes")
    if off != len(raw):
        raise CorruptFile("trailing bytes after codes")
    if fnv1a64(ids_b, body) != checksum:
        raise ChecksumMismatch(f"{path}: codes checksum mismatch")
    code_dt = np.uint8 if width == 1 else np.uint16
    codes = np.frombuffer(body, dtype="<u1" if width == 1 else "<u2").reshape(n, m).astype(code_dt)
    return PQCodes(codes, np.frombuffer(ids_b, dtype="<u8").astype(np.uint64)), k
