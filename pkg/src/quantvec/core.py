"""Shared domain types: dtype descriptors, embedding matrices and seeded RNGs."""

from __future__ import annotations

import enum
import math
import re
from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DimensionMismatch,
    DuplicateIds,
    IndivisibleGroup,
    InvalidGroup,
    MalformedDType,
    NonFiniteInput,
    ValidationError,
)

# Group-size sentinel meaning "one scale for the whole vector". Also the
# on-disk encoding of that case in store headers.
WHOLE_VECTOR = 0

SCALE_BYTES = 4


class Kind(enum.IntEnum):
    FP32 = 0
    BF16 = 1
    INT8 = 2
    INT4 = 3


_BITS = {Kind.FP32: 32, Kind.BF16: 16, Kind.INT8: 8, Kind.INT4: 4}


@dataclass(frozen=True)
class DType:
    """Storage format of a vector: element kind plus optional group size."""

    kind: Kind
    group_size: int = WHOLE_VECTOR

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if not isinstance(self.group_size, (int, np.integer)) or isinstance(self.group_size, bool):
            raise InvalidGroup(f"group size must be an integer, got {self.group_size!r}")
        object.__setattr__(self, "group_size", int(self.group_size))
        if self.group_size < 0:
            raise InvalidGroup(f"group size must be positive, got {self.group_size}")
        if not self.is_integer and self.group_size != WHOLE_VECTOR:
            raise InvalidGroup(f"{self.kind.name} does not take a group size")

    @property
    def bits(self) -> int:
        return _BITS[self.kind]

    @property
    def is_integer(self) -> bool:
        return self.kind in (Kind.INT8, Kind.INT4)

    @property
    def qmax(self) -> int:
        """Largest code, 2^(b-1) - 1."""
        return 2 ** (self.bits - 1) - 1

    @property
    def qmin(self) -> int:
        return -(2 ** (self.bits - 1))

    def effective_group(self, dim: int) -> int:
        """Group length actually used for a vector of ``dim`` elements."""
        if not self.is_integer:
            return dim
        return dim if self.group_size == WHOLE_VECTOR else self.group_size

    def n_groups(self, dim: int) -> int:
        """Number of scales stored per vector (zero for float kinds)."""
        if not self.is_integer:
            return 0
        self.check_dim(dim)
        if dim == 0:
            return 0
        return math.ceil(dim / self.effective_group(dim))

    def code_bytes(self, dim: int) -> int:
        if self.kind == Kind.FP32:
            return 4 * dim
        if self.kind == Kind.BF16:
            return 2 * dim
        if self.kind == Kind.INT8:
            return dim
        return (dim + 1) // 2

    def check_dim(self, dim: int) -> None:
        if dim < 0:
            raise DimensionMismatch(f"negative dimension {dim}")
        if self.is_integer and self.group_size != WHOLE_VECTOR and dim % self.group_size:
            raise IndivisibleGroup(
                f"dimension {dim} is not divisible by group size {self.group_size}"
            )

    def __str__(self) -> str:
        return render_dtype(self)


FP32 = DType(Kind.FP32)
BF16 = DType(Kind.BF16)

_DTYPE_RE = re.compile(r"^(fp32|bf16|int8|int4)(?::([^:]*))?$")


def dtype_parse(text: str) -> DType:
    """Parse ``fp32 | bf16 | int8[:g] | int4:g``.

    ``g`` is a positive integer or ``whole`` (one scale per vector).

    >>> dtype_parse("int4:32")
    DType(kind=<Kind.INT4: 3>, group_size=32)
    """
    m = _DTYPE_RE.match(text.strip().lower())
    if m is None:
        raise MalformedDType(f"cannot parse dtype {text!r}")
    name, group = m.group(1), m.group(2)
    kind = Kind[name.upper()]
    if group is None:
        if kind == Kind.INT4:
            raise MalformedDType(f"int4 requires a group size (int4:g or int4:whole), got {text!r}")
        return DType(kind)
    if kind in (Kind.FP32, Kind.BF16):
        raise MalformedDType(f"{name} does not take a group size: {text!r}")
    if group == "whole":
        return DType(kind, WHOLE_VECTOR)
    if not re.fullmatch(r"[+-]?\d+", group):
        raise MalformedDType(f"bad group size in {text!r}")
    g = int(group)
    if g <= 0:
        raise InvalidGroup(f"group size must be positive, got {g}")
    return DType(kind, g)


def render_dtype(dt: DType) -> str:
    """Inverse of :func:`dtype_parse`."""
    name = dt.kind.name.lower()
    if dt.kind == Kind.INT8:
        return name if dt.group_size == WHOLE_VECTOR else f"{name}:{dt.group_size}"
    if dt.kind == Kind.INT4:
        return f"{name}:whole" if dt.group_size == WHOLE_VECTOR else f"{name}:{dt.group_size}"
    return name


def bytes_per_vector(dt: DType, dim: int) -> int:
    """Stored bytes for one vector: packed codes plus 4-byte scales."""
    if dim <= 0:
        raise DimensionMismatch(f"dimension must be positive, got {dim}")
    dt.check_dim(dim)
    return dt.code_bytes(dim) + SCALE_BYTES * dt.n_groups(dim)


def make_rng(seed: int) -> np.random.Generator:
    """PCG64 generator; the stream for a given seed is platform independent."""
    if seed < 0 or seed >= 2**64:
        raise ValidationError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


@dataclass(frozen=True)
class EmbeddingMatrix:
    """Dense float32 vectors (one per row) with unique integer ids."""

    data: np.ndarray
    ids: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        data = np.ascontiguousarray(self.data, dtype=np.float32)
        if data.ndim != 2:
            raise DimensionMismatch(f"expected a 2-D array, got shape {data.shape}")
        if not np.isfinite(data).all():
            raise NonFiniteInput("embedding matrix contains NaN or Inf")
        if self.ids is None:
            ids = np.arange(data.shape[0], dtype=np.uint64)
        else:
            ids = np.asarray(self.ids)
            if ids.ndim != 1 or ids.shape[0] != data.shape[0]:
                raise DimensionMismatch(f"{ids.shape[0]} ids for {data.shape[0]} rows")
            if ids.size and (ids.dtype.kind not in "ui" or (ids.dtype.kind == "i" and ids.min() < 0)):
                raise ValidationError("ids must be non-negative integers")
            ids = ids.astype(np.uint64)
            if np.unique(ids).size != ids.size:
                raise DuplicateIds("ids must be unique")
        data.flags.writeable = False
        ids.flags.writeable = False
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "ids", ids)

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]

    def __len__(self) -> int:
        return self.n

    def take(self, rows) -> "EmbeddingMatrix":
        rows = np.asarray(rows, dtype=np.intp)
        return EmbeddingMatrix(self.data[rows], self.ids[rows])
