"""Symmetric linear quantization, group-wise scaling, BF16 conversion and INT4 packing.

Codes are computed against the scale *as stored* (float32), so dequantizing
with the stored scale is always within half a step of the input.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal

import numpy as np

from .core import BF16, FP32, DType, EmbeddingMatrix, Kind, WHOLE_VECTOR
from .errors import (
    CodeOutOfRange,
    DimensionMismatch,
    DTypeMismatch,
    EmptyInput,
    NonFiniteInput,
    ValidationError,
)

ScaleDenominator = Literal["symmetric", "paper"]

_ROW_CHUNK = 16384
_TINY_SCALE = np.float32(np.finfo(np.float32).smallest_subnormal)


def _denominator(bits: int, mode: ScaleDenominator) -> int:
    if mode == "symmetric":
        return 2 ** (bits - 1) - 1
    if mode == "paper":
        # Literal max|x| / (2^b - 1); clips everything above max|x|/2.
        return 2**bits - 1
    raise ValidationError(f"unknown scale denominator {mode!r}")


def round_half_away(v: np.ndarray) -> np.ndarray:
    """Round to nearest, ties away from zero."""
    return np.copysign(np.floor(np.abs(v) + 0.5), v)


def _quantize_groups(
    groups: np.ndarray, bits: int, mode: ScaleDenominator
) -> tuple[np.ndarray, np.ndarray]:
    """Quantize float32 ``(..., g)`` groups. Returns int8 codes and float32 scales ``(...)``."""
    amax = np.abs(groups).max(axis=-1)
    scales = (amax.astype(np.float64) / _denominator(bits, mode)).astype(np.float32)
    scales = np.where(amax == 0, np.float32(1.0), np.maximum(scales, _TINY_SCALE))
    # float32 / float32 in float64 is exact enough that ties are resolved exactly
    q = groups.astype(np.float64) / scales[..., None].astype(np.float64)
    lo, hi = -(2 ** (bits - 1)), 2 ** (bits - 1) - 1
    codes = np.clip(round_half_away(q), lo, hi).astype(np.int8)
    return codes, scales


def quantize_group(
    x, bits: int, scale_denominator: ScaleDenominator = "symmetric"
) -> tuple[np.ndarray, float]:
    """Quantize one group of values to ``bits``-bit signed codes.

    Args:
        x: Non-empty sequence of finite reals.
        bits: 4 or 8.
        scale_denominator: ``"symmetric"`` uses ``2^(b-1) - 1``; ``"paper"``
            uses ``2^b - 1``.

    Returns:
        ``(codes, scale)`` with ``codes`` an int8 array and ``scale`` the
        float32-representable scale as a Python float. An all-zero group
        gets scale 1 and zero codes.
    """
    if bits not in (4, 8):
        raise ValidationError(f"bits must be 4 or 8, got {bits}")
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise EmptyInput("quantize_group needs a non-empty 1-D slice")
    if not np.isfinite(arr).all():
        raise NonFiniteInput("group contains NaN or Inf")
    codes, scale = _quantize_groups(arr.astype(np.float32), bits, scale_denominator)
    return codes, float(scale)


def dequantize_group(codes, scale: float) -> np.ndarray:
    """Multiply codes by their scale (exact in float64)."""
    return np.asarray(codes, dtype=np.float64) * float(scale)


# --- BF16 -------------------------------------------------------------------

_BF16_MAX_BITS = 0x7F7F


def f32_to_bf16_bits(x) -> np.ndarray:
    """Round float32 values to bfloat16 bit patterns (round-to-nearest-even).

    Finite values that would round to infinity saturate to the largest finite
    bfloat16 of the same sign.
    """
    arr = np.asarray(x, dtype=np.float32)
    if not np.isfinite(arr).all():
        raise NonFiniteInput("bf16 conversion requires finite input")
    bits = arr.view(np.uint32).astype(np.uint64)
    rounded = (bits + 0x7FFF + ((bits >> 16) & 1)) >> 16
    out = rounded.astype(np.uint16)
    overflow = (out & 0x7FFF) == 0x7F80
    if overflow.any():
        out = np.where(overflow, (out & 0x8000) | _BF16_MAX_BITS, out).astype(np.uint16)
    return out


def bf16_bits_to_f32(bits) -> np.ndarray:
    b = np.asarray(bits, dtype=np.uint16)
    return (b.astype(np.uint32) << 16).view(np.float32)


def to_bf16(x: float) -> float:
    """Nearest bfloat16 value of ``x``, widened back to a Python float."""
    return float(bf16_bits_to_f32(f32_to_bf16_bits(np.float32(x))))


# --- INT4 packing -------------------------------------------------------------


def pack_int4(codes) -> bytes:
    """Pack signed 4-bit codes two per byte, even index in the low nibble."""
    return pack_int4_rows(np.asarray(codes, dtype=np.int64).reshape(1, -1)).tobytes()


def unpack_int4(data: bytes, count: int) -> np.ndarray:
    """Inverse of :func:`pack_int4`; returns ``count`` int8 codes."""
    raw = np.frombuffer(bytes(data), dtype=np.uint8)
    if raw.size < (count + 1) // 2:
        raise ValidationError(f"{raw.size} bytes cannot hold {count} nibbles")
    return unpack_int4_rows(raw.reshape(1, -1), count)[0]


def pack_int4_rows(codes: np.ndarray) -> np.ndarray:
    """Row-wise :func:`pack_int4` on an ``(n, d)`` array; returns ``(n, ceil(d/2))`` uint8."""
    codes = np.asarray(codes)
    if codes.size and (codes.min() < -8 or codes.max() > 7):
        raise CodeOutOfRange("INT4 codes must lie in [-8, 7]")
    n, d = codes.shape
    nib = (codes.astype(np.int16) & 0x0F).astype(np.uint8)
    if d % 2:
        nib = np.concatenate([nib, np.zeros((n, 1), dtype=np.uint8)], axis=1)
    return np.ascontiguousarray(nib[:, 0::2] | (nib[:, 1::2] << 4))


def unpack_int4_rows(packed: np.ndarray, dim: int) -> np.ndarray:
    packed = np.asarray(packed, dtype=np.uint8)
    n = packed.shape[0]
    out = np.empty((n, packed.shape[1] * 2), dtype=np.int8)
    out[:, 0::2] = ((packed & 0x0F) ^ 0x08).astype(np.int8) - 8
    out[:, 1::2] = ((packed >> 4) ^ 0x08).astype(np.int8) - 8
    return out[:, :dim]


# --- vectors and stores -------------------------------------------------------


def _encode_rows(
    data: np.ndarray, dt: DType, mode: ScaleDenominator
) -> tuple[np.ndarray, np.ndarray]:
    n, d = data.shape
    if dt.kind == Kind.FP32:
        return data.astype(np.float32, copy=True), np.zeros((n, 0), np.float32)
    if dt.kind == Kind.BF16:
        return f32_to_bf16_bits(data), np.zeros((n, 0), np.float32)
    g = dt.effective_group(d)
    n_groups = dt.n_groups(d)
    width = dt.code_bytes(d)
    codes = np.empty((n, width), dtype=np.int8 if dt.kind == Kind.INT8 else np.uint8)
    scales = np.empty((n, n_groups), dtype=np.float32)
    if d == 0:
        return codes, scales
    for start in range(0, n, _ROW_CHUNK):
        block = data[start : start + _ROW_CHUNK]
        c, s = _quantize_groups(block.reshape(block.shape[0], n_groups, g), dt.bits, mode)
        c = c.reshape(block.shape[0], d)
        codes[start : start + block.shape[0]] = pack_int4_rows(c) if dt.kind == Kind.INT4 else c
        scales[start : start + block.shape[0]] = s
    return codes, scales


@dataclass(frozen=True)
class QuantizedVector:
    """One encoded vector: stored codes plus per-group scales."""

    dt: DType
    dim: int
    codes: np.ndarray
    scales: np.ndarray

    def int_codes(self) -> np.ndarray:
        """Unpacked integer codes (integer dtypes only)."""
        if self.dt.kind == Kind.INT4:
            return unpack_int4_rows(self.codes.reshape(1, -1), self.dim)[0]
        if self.dt.kind == Kind.INT8:
            return self.codes
        raise DTypeMismatch(f"{self.dt} has no integer codes")

    def dequantize(self) -> np.ndarray:
        """Decoded values in float64 (exact for every dtype)."""
        if self.dt.kind == Kind.FP32:
            return self.codes.astype(np.float64)
        if self.dt.kind == Kind.BF16:
            return bf16_bits_to_f32(self.codes).astype(np.float64)
        g = self.dt.effective_group(self.dim)
        c = self.int_codes().astype(np.float64).reshape(-1, g)
        return (c * self.scales.astype(np.float64)[:, None]).reshape(-1)


def quantize_vector(
    x, dt: DType, dim: int | None = None, scale_denominator: ScaleDenominator = "symmetric"
) -> QuantizedVector:
    """Encode a single vector under ``dt`` (groups are consecutive runs of ``g`` elements)."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 1:
        raise DimensionMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise DimensionMismatch(f"vector has {arr.shape[0]} elements, expected {dim}")
    if not np.isfinite(arr).all():
        raise NonFiniteInput("vector contains NaN or Inf")
    dt.check_dim(arr.shape[0])
    codes, scales = _encode_rows(arr.reshape(1, -1), dt, scale_denominator)
    return QuantizedVector(dt, arr.shape[0], codes[0], scales[0])


@dataclass(frozen=True)
class QuantizedStore:
    """A compressed database: ``n`` vectors sharing one dtype and dimension.

    ``codes`` holds the stored form per row: float32 values (FP32), bfloat16
    bit patterns (BF16), int8 codes (INT8) or packed nibbles (INT4).
    """

    dt: DType
    dim: int
    codes: np.ndarray
    scales: np.ndarray
    ids: np.ndarray

    def __post_init__(self):
        n = self.ids.shape[0]
        width = self.dt.code_bytes(self.dim) // {Kind.FP32: 4, Kind.BF16: 2}.get(self.dt.kind, 1)
        if self.codes.shape != (n, width):
            raise DimensionMismatch(f"codes shape {self.codes.shape} != {(n, width)}")
        if self.scales.shape != (n, self.dt.n_groups(self.dim)):
            raise DimensionMismatch(f"scales shape {self.scales.shape} inconsistent with {self.dt}")
        for arr in (self.codes, self.scales, self.ids):
            arr.flags.writeable = False

    @property
    def n(self) -> int:
        return self.ids.shape[0]

    def __len__(self) -> int:
        return self.n

    def __getitem__(self, i: int) -> QuantizedVector:
        return QuantizedVector(self.dt, self.dim, self.codes[i], self.scales[i])

    @property
    def payload_nbytes(self) -> int:
        """Bytes of codes plus scales, i.e. ``n * bytes_per_vector``."""
        return self.codes.nbytes + self.scales.nbytes

    def int_codes(self, rows: slice = slice(None)) -> np.ndarray:
        if self.dt.kind == Kind.INT4:
            return unpack_int4_rows(self.codes[rows], self.dim)
        if self.dt.kind == Kind.INT8:
            return self.codes[rows]
        raise DTypeMismatch(f"{self.dt} has no integer codes")

    def decode_rows(self, rows: slice = slice(None)) -> np.ndarray:
        """Dequantized rows in float64."""
        if self.dt.kind == Kind.FP32:
            return self.codes[rows].astype(np.float64)
        if self.dt.kind == Kind.BF16:
            return bf16_bits_to_f32(self.codes[rows]).astype(np.float64)
        c = self.int_codes(rows)
        g = self.dt.effective_group(self.dim)
        s = self.scales[rows].astype(np.float64)
        return (c.reshape(c.shape[0], -1, g) * s[:, :, None]).reshape(c.shape[0], self.dim)

    def dequantize(self) -> EmbeddingMatrix:
        """The store's full-precision image as an :class:`EmbeddingMatrix`."""
        if self.n == 0:
            return EmbeddingMatrix(np.zeros((0, self.dim), np.float32), self.ids)
        return EmbeddingMatrix(self.decode_rows().astype(np.float32), self.ids)


def quantize_store(
    m: EmbeddingMatrix, dt: DType, scale_denominator: ScaleDenominator = "symmetric"
) -> QuantizedStore:
    """Encode every row of ``m`` under ``dt``."""
    dt.check_dim(m.dim)
    codes, scales = _encode_rows(m.data, dt, scale_denominator)
    return QuantizedStore(dt, m.dim, codes, scales, m.ids.copy())


__all__ = [
    "BF16",
    "FP32",
    "WHOLE_VECTOR",
    "QuantizedStore",
    "QuantizedVector",
    "bf16_bits_to_f32",
    "dequantize_group",
    "f32_to_bf16_bits",
    "pack_int4",
    "pack_int4_rows",
    "quantize_group",
    "quantize_store",
    "quantize_vector",
    "round_half_away",
    "to_bf16",
    "unpack_int4",
    "unpack_int4_rows",
]
