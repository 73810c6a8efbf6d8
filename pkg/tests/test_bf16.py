import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoflow.bf16 import (
    MAX_FINITE,
    MIN_NORMAL,
    Bf16Value,
    StepModel,
    bf16_round,
    decode,
    measured_roundtrip_error,
    round_to_bf16,
    ulp_at,
)
from geoflow.errors import DomainError
from oracles import bf16_table

finite_normal = st.floats(min_value=-1e30, max_value=1e30, allow_nan=False).filter(
    lambda x: x == 0 or abs(x) >= MIN_NORMAL
)


def _oracle_round(x, grid):
    """Nearest entry of the sorted positive grid, ties to the even bit pattern."""
    bits_grid, vals = grid
    i = np.clip(np.searchsorted(vals, x), 1, len(vals) - 1)
    lo, hi = vals[i - 1], vals[i]
    out = np.where(x - lo < hi - x, lo, hi)
    tie = (x - lo) == (hi - x)
    even_lo = (bits_grid[i - 1] & 1) == 0
    return np.where(tie, np.where(even_lo, lo, hi), out)


@pytest.fixture(scope="module")
def positive_grid():
    bits, values, normal = bf16_table()
    keep = normal & (values > 0)
    order = np.argsort(values[keep])
    return bits[keep][order], values[keep][order]


def test_examples():
    assert decode(round_to_bf16(1.0)) == 1.0
    assert decode(round_to_bf16(0.501953125)) == 0.5
    assert round_to_bf16(0.501953125).fraction == 0
    assert decode(round_to_bf16(0.7)) == np.rint(0.7 * 256) / 256
    assert measured_roundtrip_error(1.0) == 0.0
    assert measured_roundtrip_error(0.501953125) == 0.001953125


def test_ulp_examples():
    assert ulp_at(0.75) == 1 / 256
    assert ulp_at(0.25) == 1 / 512
    assert ulp_at(1.5) == 1 / 128


def test_ulp_matches_enumerated_spacing(positive_grid):
    _, vals = positive_grid
    gaps = np.diff(vals)
    np.testing.assert_array_equal(ulp_at(vals[:-1]), gaps)


def test_every_encoding_decodes_like_float32_view():
    bits, values, normal = bf16_table()
    for b in bits[normal][::97]:
        assert Bf16Value.from_bits(int(b)).decode() == values[b]
    decoded = np.array([Bf16Value.from_bits(int(b)).decode() for b in bits[normal]])
    np.testing.assert_array_equal(decoded, values[normal])


def test_every_encoding_round_trips_bit_exact():
    bits, values, normal = bf16_table()
    for b, v in zip(bits[normal], values[normal]):
        assert round_to_bf16(v).bits == b
    # both signed zeros
    assert round_to_bf16(0.0).bits == 0
    assert round_to_bf16(-0.0).bits == 0x8000


def test_midpoints_round_to_even(positive_grid):
    bits_grid, vals = positive_grid
    mids = (vals[:-1] + vals[1:]) / 2
    got = bf16_round(mids)
    even_lo = (bits_grid[:-1] & 1) == 0
    np.testing.assert_array_equal(got, np.where(even_lo, vals[:-1], vals[1:]))
    np.testing.assert_array_equal(bf16_round(-mids), -got)


def test_random_values_match_enumeration_oracle(positive_grid, rng):
    x = np.exp(rng.uniform(np.log(MIN_NORMAL), np.log(MAX_FINITE / 2), 200_000))
    np.testing.assert_array_equal(bf16_round(x), _oracle_round(x, positive_grid))


def test_rejects_outside_domain():
    for bad in (np.inf, -np.inf, np.nan, MIN_NORMAL / 4, 1e39):
        with pytest.raises(DomainError):
            round_to_bf16(bad)
    with pytest.raises(DomainError):
        ulp_at(0.0)
    with pytest.raises(DomainError):
        measured_roundtrip_error(1.5)
    with pytest.raises(DomainError):
        Bf16Value.from_bits(0x7F80).decode()  # +inf
    with pytest.raises(DomainError):
        Bf16Value.from_bits(0x0001).decode()  # subnormal


def test_step_model_validation():
    assert StepModel().delta_v == 1 / 256
    assert StepModel.round_to_nearest().delta_v == 1 / 512
    for bad in (0.0, -1e-3, 2**-6):
        with pytest.raises(ValueError):
            StepModel(bad)


@given(finite_normal)
def test_idempotent(x):
    once = round_to_bf16(x)
    assert round_to_bf16(decode(once)) == once


@given(finite_normal, finite_normal)
def test_monotone(x, y):
    x, y = min(x, y), max(x, y)
    assert decode(round_to_bf16(x)) <= decode(round_to_bf16(y))


@given(st.floats(min_value=0.5, max_value=1.0))
def test_error_bounds_in_worst_binade(x):
    err = measured_roundtrip_error(x)
    assert err <= StepModel.round_to_nearest().delta_v
    assert err <= StepModel.spacing().delta_v


@given(st.floats(min_value=-1.0, max_value=1.0).filter(lambda v: abs(v) >= MIN_NORMAL))
def test_error_at_most_half_ulp(x):
    assert measured_roundtrip_error(x) <= ulp_at(abs(x)) / 2
