import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from privnav.errors import ConfigError, RangeError
from privnav.ring import (DEFAULT_FIXED, FixedConfig, FixedVec, as_ring, decode_fixed, encode_fixed, ring_add,
                          ring_matmul, ring_mul, ring_neg, ring_sub, shift_right_signed, to_signed, truncate)

ULP = DEFAULT_FIXED.ulp
TWO64 = 1 << 64


def test_encode_examples():
    assert int(encode_fixed(0.0)) == 0
    assert int(encode_fixed(1.0)) == 65536
    assert int(encode_fixed(-1.0)) == TWO64 - 65536


def test_decode_examples():
    assert decode_fixed(np.uint64(65536)) == 1.0
    assert decode_fixed(np.uint64(0)) == 0.0
    assert abs(decode_fixed(encode_fixed(3.14159)) - 3.14159) <= 2 ** -16


def test_round_half_away_from_zero():
    half = 0.5 * ULP
    assert int(encode_fixed(half)) == 1
    assert int(to_signed(encode_fixed(-half))) == -1
    assert int(encode_fixed(2.5 * ULP)) == 3


def test_encode_range_error():
    with pytest.raises(RangeError):
        encode_fixed(2.0 ** 47)
    with pytest.raises(RangeError):
        encode_fixed(np.array([0.0, -(2.0 ** 47)]))
    encode_fixed(2.0 ** 47 - 1)


def test_frac_bits_bounds():
    with pytest.raises(ConfigError):
        FixedConfig(0)
    with pytest.raises(ConfigError):
        FixedConfig(32)
    assert FixedConfig(31).scale == 2 ** 31


def test_ring_examples():
    assert int(ring_add(np.uint64(TWO64 - 1), np.uint64(1))) == 0
    assert int(ring_mul(np.uint64(123456789), np.uint64(0))) == 0
    assert int(ring_mul(np.uint64(3), np.uint64(5))) == 15
    assert int(ring_sub(np.uint64(0), np.uint64(1))) == TWO64 - 1
    assert int(ring_neg(np.uint64(1))) == TWO64 - 1


def test_as_ring_reduces_python_ints():
    assert int(as_ring(-1)) == TWO64 - 1
    assert int(as_ring(TWO64 + 5)) == 5
    np.testing.assert_array_equal(as_ring([-(2 ** 63), 2 ** 64 - 1]), np.array([2 ** 63, TWO64 - 1], np.uint64))


@given(st.lists(st.integers(0, TWO64 - 1), min_size=1, max_size=8),
       st.lists(st.integers(0, TWO64 - 1), min_size=1, max_size=8))
def test_ring_ops_match_python_bigints(xs, ys):
    n = min(len(xs), len(ys))
    a, b = as_ring(xs[:n]), as_ring(ys[:n])
    assert [int(v) for v in ring_add(a, b)] == [(x + y) % TWO64 for x, y in zip(xs, ys)]
    assert [int(v) for v in ring_sub(a, b)] == [(x - y) % TWO64 for x, y in zip(xs, ys)]
    assert [int(v) for v in ring_mul(a, b)] == [(x * y) % TWO64 for x, y in zip(xs, ys)]


def test_ring_matmul_matches_bigint(rng):
    a = rng.integers(0, 2 ** 63, (3, 4), dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    b = rng.integers(0, 2 ** 63, (4, 2), dtype=np.uint64)
    got = ring_matmul(a, b)
    for i in range(3):
        for j in range(2):
            want = sum(int(a[i, k]) * int(b[k, j]) for k in range(4)) % TWO64
            assert int(got[i, j]) == want


@given(st.integers(-(2 ** 40), 2 ** 40))
def test_encode_grid_injective_and_exact(k):
    x = k * ULP
    assert int(to_signed(encode_fixed(x))) == k
    assert decode_fixed(encode_fixed(x)) == x


@given(st.integers(-(2 ** 30), 2 ** 30), st.integers(-(2 ** 30), 2 ** 30))
def test_add_exact_on_grid(i, j):
    a, b = i * ULP, j * ULP
    assert decode_fixed(ring_add(encode_fixed(a), encode_fixed(b))) == a + b


@given(st.floats(-1e6, 1e6, allow_nan=False))
def test_negation_symmetry(x):
    assert int(encode_fixed(-x)) == int(ring_neg(encode_fixed(x)))


def _trunc_with_random_mask(raw, rng):
    r = rng.integers(0, 2 ** 63, np.shape(raw), dtype=np.uint64)
    return truncate(raw, DEFAULT_FIXED, r, r >> np.uint64(16))


def test_truncate_examples(rng):
    one = ring_mul(encode_fixed(1.0), encode_fixed(1.0))
    assert int(one) == 2 ** 32
    for _ in range(50):
        assert abs(decode_fixed(_trunc_with_random_mask(one, rng)) - 1.0) <= 2 * ULP
        assert abs(decode_fixed(_trunc_with_random_mask(np.uint64(0), rng))) <= 2 * ULP
        q = _trunc_with_random_mask(ring_mul(encode_fixed(0.5), encode_fixed(0.5)), rng)
        assert abs(decode_fixed(q) - 0.25) <= 2 ** -15


def test_truncated_product_error_bound(rng):
    """|decode(trunc(enc(a)enc(b))) - ab| <= ulp(|a|+|b|) + 2 ulp over 10^5 pairs in [-256, 256]."""
    a = rng.uniform(-256, 256, 100_000)
    b = rng.uniform(-256, 256, 100_000)
    got = decode_fixed(_trunc_with_random_mask(ring_mul(encode_fixed(a), encode_fixed(b)), rng))
    bound = ULP * (np.abs(a) + np.abs(b)) + 2 * ULP
    assert np.all(np.abs(got - a * b) <= bound)


def test_shift_right_signed_is_floor():
    vals = np.array([-5, -4, -1, 0, 1, 7], dtype=np.int64)
    got = to_signed(shift_right_signed(vals.view(np.uint64), 1))
    np.testing.assert_array_equal(got, np.floor(vals / 2).astype(np.int64))


def test_fixedvec():
    v = FixedVec.from_real([[1.5, -2.0]])
    assert v.shape == (1, 2)
    np.testing.assert_array_equal(v.decode(), [[1.5, -2.0]])
    assert v == FixedVec.from_real([[1.5, -2.0]])
    assert not v == FixedVec.from_real([[1.5, -2.5]])
