"""Exception hierarchy shared by every quantvec module."""

from __future__ import annotations


class QuantVecError(Exception):
    """Base class for all library errors."""


class ValidationError(QuantVecError, ValueError):
    """Bad arguments or inputs that violate an operation's preconditions."""


class MalformedDType(ValidationError):
    pass


class InvalidGroup(ValidationError):
    pass


class DimensionMismatch(ValidationError):
    pass


class IndivisibleGroup(ValidationError):
    pass


class NonFiniteInput(ValidationError):
    pass


class CodeOutOfRange(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class EmptyInput(ValidationError):
    pass


class ConstantInput(ValidationError):
    pass


class LengthMismatch(ValidationError):
    pass


class DTypeMismatch(ValidationError):
    pass


class DuplicateIds(ValidationError):
    pass


class TooFewTrainingVectors(ValidationError):
    pass


class IndivisibleDim(ValidationError):
    pass


class SampleTooLarge(ValidationError):
    pass


class InsufficientCandidates(ValidationError):
    pass


class SizesExceedCount(ValidationError):
    pass


class StoreIOError(QuantVecError, OSError):
    """Problems reading or parsing files on disk."""


class ParseError(StoreIOError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class DimMismatch(ParseError):
    pass


class NonFiniteValue(ParseError):
    pass


class BadMagic(StoreIOError):
    pass


class VersionUnsupported(StoreIOError):
    pass


class TruncatedFile(StoreIOError):
    pass


class ChecksumMismatch(StoreIOError):
    pass


class CorruptFile(StoreIOError):
    pass
