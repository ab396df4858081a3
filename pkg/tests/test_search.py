import numpy as np
import pytest

from oracles import naive_knn
from quantvec import EmbeddingMatrix, dtype_parse, knn_float, knn_quantized, quantize_store
from quantvec.errors import DimensionMismatch, DTypeMismatch, EmptyInput, ValidationError
from quantvec.search import CHUNK_ROWS


def ids_of(results):
    return [[int(i) for i in r.ids] for r in results]


def test_self_hit(gaussian):
    db = gaussian(50, 16)
    res = knn_float(db.take([7]), db, k=3)
    assert res[0].hits[0][0] == 7
    assert res[0].hits[0][1] == pytest.approx(1.0, abs=1e-12)


def test_standard_basis():
    db = EmbeddingMatrix(np.eye(3), ids=[10, 11, 12])
    q = EmbeddingMatrix(np.eye(3)[[1]], ids=[99])
    res = knn_float(q, db, k=1)
    assert res[0].query_id == 99
    assert res[0].hits == [(11, 1.0)]


def test_matches_naive_oracle(gaussian):
    db = gaussian(100, 24)
    q = gaussian(8, 24)
    assert ids_of(knn_float(q, db, k=10)) == naive_knn(q.data, db.data, db.ids, 10)


def test_ties_break_by_ascending_id():
    v = np.array([[1.0, 0.0]] * 4 + [[0.0, 1.0]])
    db = EmbeddingMatrix(v, ids=[40, 5, 17, 9, 1])
    res = knn_float(EmbeddingMatrix(np.array([[1.0, 0.0]])), db, k=3)
    assert list(res[0].ids) == [5, 9, 17]


def test_k_larger_than_db(gaussian):
    db = gaussian(4, 8)
    res = knn_float(db, db, k=10)
    assert all(len(r) == 4 for r in res)
    with pytest.raises(ValidationError):
        knn_float(db, db, k=0)


def test_permutation_invariance(gaussian, rng):
    db = gaussian(200, 16)
    q = gaussian(5, 16)
    perm = rng.permutation(200)
    for text in ["fp32", "int8", "int4:8"]:
        dt = dtype_parse(text)
        a = knn_quantized(q, quantize_store(db, dt), k=10)
        b = knn_quantized(q, quantize_store(db.take(perm), dt), k=10)
        for x, y in zip(a, b):
            assert np.array_equal(x.ids, y.ids)
            assert np.array_equal(x.scores, y.scores)


def test_k_monotone_prefix(gaussian):
    db = quantize_store(gaussian(300, 32), dtype_parse("int4:16"))
    q = gaussian(6, 32)
    short = knn_quantized(q, db, k=5)
    long = knn_quantized(q, db, k=25)
    for s, l_ in zip(short, long):
        assert np.array_equal(s.ids, l_.ids[:5])


@pytest.mark.parametrize("text", ["bf16", "int8", "int8:16", "int4:16", "int4:whole"])
def test_quantized_equals_float_over_dequantized(text, gaussian):
    db = gaussian(300, 64)
    q = gaussian(20, 64)
    dt = dtype_parse(text)
    store = quantize_store(db, dt)
    qstore = quantize_store(q, dt)
    on = knn_quantized(q, store, k=10)
    assert ids_of(on) == ids_of(knn_float(qstore.dequantize(), store.dequantize(), k=10))
    off = knn_quantized(q, store, k=10, quantize_queries=False)
    assert ids_of(off) == ids_of(knn_float(q, store.dequantize(), k=10))
    assert ids_of(knn_quantized(qstore, store, k=10)) == ids_of(on)


def test_fp32_path_is_knn_float(gaussian):
    db = gaussian(100, 16)
    q = gaussian(4, 16)
    a = knn_quantized(q, quantize_store(db, dtype_parse("fp32")), k=7)
    b = knn_float(q, db, k=7)
    for x, y in zip(a, b):
        assert np.array_equal(x.ids, y.ids) and np.array_equal(x.scores, y.scores)


def test_integer_ties_across_chunks():
    # duplicated rows straddle chunk boundaries; many exact ties
    rng = np.random.default_rng(5)
    base = rng.integers(-2, 3, size=(50, 8)).astype(np.float32)
    base[np.all(base == 0, axis=1)] = 1
    n = 2 * CHUNK_ROWS + 100
    data = base[rng.integers(0, 50, n)]
    ids = rng.permutation(10 * n)[:n]
    db = EmbeddingMatrix(data, ids=ids)
    q = EmbeddingMatrix(base[:3])
    store = quantize_store(db, dtype_parse("int8"))
    one = knn_quantized(q, store, k=20, threads=1)
    many = knn_quantized(q, store, k=20, threads=4)
    assert ids_of(one) == ids_of(many)
    ref = knn_float(quantize_store(q, dtype_parse("int8")).dequantize(), store.dequantize(), k=20)
    assert ids_of(one) == ids_of(ref)
    for r in one:
        s = r.scores
        for a in range(len(s) - 1):
            assert s[a] > s[a + 1] or (s[a] == s[a + 1] and r.ids[a] < r.ids[a + 1])


def test_errors(gaussian):
    db = quantize_store(gaussian(10, 16), dtype_parse("int8"))
    with pytest.raises(DimensionMismatch):
        knn_quantized(gaussian(2, 8), db, k=1)
    with pytest.raises(DTypeMismatch):
        knn_quantized(quantize_store(gaussian(2, 16), dtype_parse("int4:8")), db, k=1)
    empty = quantize_store(EmbeddingMatrix(np.zeros((0, 16))), dtype_parse("int8"))
    with pytest.raises(EmptyInput):
        knn_quantized(gaussian(2, 16), empty, k=1)
