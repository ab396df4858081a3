from fractions import Fraction

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from oracles import bf16_reference, quantize_exact, scale_f32
from quantvec import EmbeddingMatrix, dtype_parse, quantize_store, quantize_vector
from quantvec.errors import EmptyInput, IndivisibleGroup, NonFiniteInput
from quantvec.quantize import (
    dequantize_group,
    f32_to_bf16_bits,
    pack_int4,
    pack_int4_rows,
    quantize_group,
    to_bf16,
    unpack_int4,
    unpack_int4_rows,
)

_F32_BIG = float(np.float32(1e30))
finite32 = st.floats(-_F32_BIG, _F32_BIG, allow_nan=False, allow_infinity=False, width=32)
groups = hnp.arrays(np.float32, st.integers(1, 64), elements=finite32)


def test_extremes_map_to_qmax():
    codes, s = quantize_group([1.0, -1.0], 4)
    assert list(codes) == [7, -7]
    assert s == float(np.float32(1 / 7))


def test_zero_group_fallback():
    codes, s = quantize_group([0.0, 0.0, 0.0], 8)
    assert list(codes) == [0, 0, 0] and s == 1.0


def test_mixed_group_against_exact_oracle():
    x = [0.5, -1.0, 0.25, 0.75]
    codes, s = quantize_group(x, 4)
    # The stored scale float32(1/7) is a hair above 1/7, so 0.5/S falls just
    # below 3.5 and rounds to 3. With the unrounded rational 1/7 it would be 4.
    assert s == float(np.float32(1 / 7))
    assert list(codes) == quantize_exact(x, 4, s) == [3, -7, 2, 5]
    assert quantize_exact(x, 4, Fraction(1, 7)) == [4, -7, 2, 5]
    assert np.all(np.abs(np.array(x) - dequantize_group(codes, s)) <= s / 2)


def test_dequantize_examples():
    assert list(dequantize_group([7, -7], 1 / 7)) == pytest.approx([1.0, -1.0], abs=1e-15)
    assert list(dequantize_group([0, 0, 0], 1.0)) == [0.0, 0.0, 0.0]
    got = dequantize_group([4, -7, 2, 5], 1 / 7)
    expected = [float(Fraction(c, 7)) for c in (4, -7, 2, 5)]
    assert list(got) == pytest.approx(expected, abs=1e-15)
    assert np.all(np.abs(np.array([0.5, -1.0, 0.25, 0.75]) - got) <= 0.5 / 7 + 1e-15)


def test_quantize_group_errors():
    with pytest.raises(EmptyInput):
        quantize_group([], 8)
    with pytest.raises(NonFiniteInput):
        quantize_group([1.0, np.inf], 8)


def test_paper_denominator_clips_upper_half():
    codes, s = quantize_group([1.0, -1.0, 0.25], 4, scale_denominator="paper")
    assert s == float(np.float32(1 / 15))
    assert list(codes) == [7, -8, 4]


def test_vector_group_structure():
    x = np.linspace(-1, 1, 64, dtype=np.float32)
    qv = quantize_vector(x, dtype_parse("int4:32"))
    assert qv.scales.shape == (2,) and qv.codes.nbytes == 32
    qv = quantize_vector(np.ones(1536, np.float32), dtype_parse("int4:256"))
    assert qv.scales.shape == (6,)
    with pytest.raises(IndivisibleGroup):
        quantize_vector(np.ones(100, np.float32), dtype_parse("int4:32"))


def test_group_scaled_by_ten():
    rng = np.random.default_rng(3)
    g0 = rng.standard_normal(32).astype(np.float32)
    g1 = (g0.astype(np.float64) * 10).astype(np.float32)
    qv = quantize_vector(np.concatenate([g0, g1]), dtype_parse("int8:32"))
    codes = qv.int_codes()
    # oracle: exact rational rounding against each stored scale
    assert list(codes[:32]) == quantize_exact(g0, 8, scale_f32(g0, 8))
    assert list(codes[32:]) == quantize_exact(g1, 8, scale_f32(g1, 8))
    assert np.array_equal(codes[:32], codes[32:])
    assert qv.scales[1] == pytest.approx(10 * qv.scales[0], rel=1e-6)


@pytest.mark.parametrize("value", [1.0, 0.0, -2.0, 0.2, 1e-3, 3.14159, 65504.0, 1e38, -1e-40])
def test_bf16_matches_torch(value):
    assert to_bf16(value) == float(bf16_reference([value])[0])


def test_bf16_examples():
    assert to_bf16(1.0) == 1.0
    assert to_bf16(0.0) == 0.0
    assert to_bf16(0.2) == 0.2001953125


def test_bf16_saturates():
    big = float(np.finfo(np.float32).max)
    assert to_bf16(big) == float(np.float32(np.uint32(0x7F7F0000).view(np.float32)))
    assert to_bf16(-big) == -to_bf16(big)


@settings(max_examples=200, deadline=None)
@given(hnp.arrays(np.float32, st.integers(1, 200), elements=st.floats(allow_nan=False, allow_infinity=False, width=32)))
def test_bf16_bulk_matches_torch(x):
    ref = bf16_reference(x)
    got = (f32_to_bf16_bits(x).astype(np.uint32) << 16).view(np.float32)
    finite = np.isfinite(ref)
    assert np.array_equal(got[finite], ref[finite])


@settings(max_examples=100, deadline=None)
@given(hnp.arrays(np.float32, st.integers(1, 50), elements=finite32))
def test_bf16_idempotent(x):
    once = np.array([to_bf16(v) for v in x])
    twice = np.array([to_bf16(v) for v in once])
    assert np.array_equal(once, twice)


def test_pack_examples():
    assert pack_int4([4, -7]) == bytes([0x94])
    assert pack_int4([]) == b""
    assert list(unpack_int4(bytes([0x94]), 2)) == [4, -7]
    assert list(unpack_int4(pack_int4([3, -1, 5]), 3)) == [3, -1, 5]


def test_pack_round_trip_1536():
    codes = np.random.default_rng(0).integers(-8, 8, 1536)
    assert np.array_equal(unpack_int4(pack_int4(codes), 1536), codes)
    rows = np.random.default_rng(1).integers(-8, 8, (5, 7)).astype(np.int8)
    assert np.array_equal(unpack_int4_rows(pack_int4_rows(rows), 7), rows)


@settings(max_examples=300, deadline=None)
@given(groups, st.sampled_from([4, 8]))
def test_round_trip_bound(x, bits):
    codes, s = quantize_group(x, bits)
    err = np.abs(x.astype(np.float64) - dequantize_group(codes, s))
    assert np.all(err <= s / 2)
    assert list(codes) == quantize_exact(x, bits, s)


@settings(max_examples=300, deadline=None)
@given(groups, st.sampled_from([4, 8]))
def test_sign_symmetry(x, bits):
    c, s = quantize_group(x, bits)
    cn, sn = quantize_group(-x, bits)
    assert s == sn
    if not np.any(c == -(2 ** (bits - 1))) and not np.any(cn == -(2 ** (bits - 1))):
        assert np.array_equal(cn, -c)


@settings(max_examples=300, deadline=None)
@given(
    hnp.arrays(np.float32, st.integers(1, 64), elements=st.floats(-1048576.0, 1048576.0, width=32, allow_subnormal=False)),
    st.sampled_from([4, 8]),
    st.integers(-20, 20),
)
def test_power_of_two_equivariance(x, bits, e):
    alpha = 2.0**e
    tiny = np.abs(x[x != 0])
    # exact only while every scaled element and scale stays a normal float32
    assume(tiny.size == 0 or tiny.min() * min(alpha, 1.0) > 1e-30)
    c, s = quantize_group(x, bits)
    ca, sa = quantize_group(x * np.float32(alpha), bits)
    if s == 1.0 and not np.any(x):
        return
    assert np.array_equal(c, ca)
    assert sa == s * alpha


def test_store_matches_vector_path(rng):
    m = EmbeddingMatrix(rng.standard_normal((20, 64)))
    for text in ["fp32", "bf16", "int8", "int8:16", "int4:32", "int4:whole"]:
        dt = dtype_parse(text)
        st_ = quantize_store(m, dt)
        for i in (0, 7, 19):
            qv = quantize_vector(m.data[i], dt)
            assert np.array_equal(st_[i].codes, qv.codes)
            assert np.array_equal(st_[i].scales, qv.scales)
        deq = st_.dequantize()
        assert deq.data.shape == (20, 64)
        assert np.array_equal(deq.ids, m.ids)


def test_codes_in_range(rng):
    m = EmbeddingMatrix(rng.standard_normal((50, 96)) * 100)
    for text, lo, hi in [("int8:32", -128, 127), ("int4:32", -8, 7)]:
        c = quantize_store(m, dtype_parse(text)).int_codes()
        assert c.min() >= lo and c.max() <= hi
