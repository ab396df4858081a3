"""Quantized embedding store with exact cosine kNN search and an evaluation harness."""

from .core import BF16, FP32, WHOLE_VECTOR, DType, EmbeddingMatrix, Kind, bytes_per_vector, dtype_parse, make_rng, render_dtype
from .quantize import QuantizedStore, QuantizedVector, quantize_store, quantize_vector
from .search import TopKResult, knn_float, knn_quantized

__version__ = "0.1.0"

__all__ = [
    "BF16",
    "FP32",
    "WHOLE_VECTOR",
    "DType",
    "EmbeddingMatrix",
    "Kind",
    "QuantizedStore",
    "QuantizedVector",
    "TopKResult",
    "bytes_per_vector",
    "dtype_parse",
    "knn_float",
    "knn_quantized",
    "make_rng",
    "quantize_store",
    "quantize_vector",
    "render_dtype",
]
