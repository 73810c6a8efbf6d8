import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from oracles import sorted_percentile

from geoflow.bf16 import StepModel
from geoflow.depth_codec import (
    QuantScheme,
    SchemeKind,
    decode,
    distinguishable,
    encode,
    error_table,
    percentile_affine,
    percentile_denormalize,
    percentile_normalize,
    table_schemes,
    worst_case_error,
    write_error_csv,
)
from geoflow.errors import DegenerateInputError, DomainError

UNI, INV, LOG = table_schemes()


def test_scheme_validation():
    with pytest.raises(ValueError):
        QuantScheme(SchemeKind.INVERSE, 0.0, 80.0)
    with pytest.raises(ValueError):
        QuantScheme(SchemeKind.UNIFORM, 5.0, 5.0)
    assert QuantScheme("log", 0.1, 80.0).kind is SchemeKind.LOGARITHMIC


def test_encode_examples():
    assert encode(UNI, 40.0, rounding=False).values == 0.0
    assert encode(UNI, 80.0).values == 1.0
    assert encode(LOG, math.sqrt(0.1 * 80), rounding=False).values == pytest.approx(0.0, abs=1e-15)


def test_decode_examples():
    assert decode(UNI, np.array(0.0)) == 40.0
    assert decode(INV, np.array(1.0)) == pytest.approx(0.1, rel=1e-15)
    assert decode(LOG, np.array(-1.0)) == pytest.approx(0.1, rel=1e-15)


def test_nonpositive_depth_is_masked_not_raised():
    lab = encode(INV, np.array([0.0, -1.0, 2.0]))
    np.testing.assert_array_equal(lab.valid_mask, [False, False, True])
    d = decode(INV, lab)
    assert np.isnan(d[0]) and np.isnan(d[1]) and np.isfinite(d[2])


def test_worst_case_examples():
    assert worst_case_error(UNI, 80.0) == (0.15625, pytest.approx(0.001953125))
    err, rel = worst_case_error(INV, 80.0)
    assert err == pytest.approx(124.8, rel=1e-3)
    assert rel == pytest.approx(1.561, rel=1e-3)
    err, rel = worst_case_error(LOG, 0.1)
    assert err == pytest.approx(1.306e-3, rel=1e-3)
    assert rel == pytest.approx(0.01306, rel=1e-3)
    # hand evaluation of the disparity step: (10 - 1/80) / 2 / 256
    assert INV.x_step(StepModel()) == pytest.approx((10 - 1 / 80) / 512, rel=1e-15)
    with pytest.raises(DomainError):
        worst_case_error(LOG, 0.05)


def test_distinguishable_examples():
    assert not distinguishable(INV, 39.0, 78.0)
    assert distinguishable(LOG, 39.0, 78.0)
    for s in (UNI, INV, LOG):
        assert not distinguishable(s, 12.0, 12.0)
    # the disparity gap is smaller than one step
    assert abs(1 / 39 - 1 / 78) < INV.x_step(StepModel())


def test_percentile_examples():
    a, b = 0.0, 4.0
    d_log = np.linspace(a, b, 101)
    lab = percentile_affine(d_log, np.ones(101, bool), rounding=False)
    assert lab.values[50] == pytest.approx(0.0, abs=1e-12)
    lo = lab.anchors[0]
    at_lo = percentile_affine(np.append(d_log, lo), np.ones(102, bool))
    assert at_lo.values[-1] == -1.0


def test_percentile_ramp_matches_sort_oracle():
    ramp = np.arange(100, dtype=float)
    mask = np.ones(100, bool)
    lab = percentile_affine(ramp, mask, rounding=False)
    lo, hi = sorted_percentile(ramp, 2), sorted_percentile(ramp, 98)
    assert lab.anchors == pytest.approx((lo, hi), abs=1e-12)
    expect = np.clip(((ramp - lo) / (hi - lo) - 0.5) * 2, -1, 1)
    np.testing.assert_allclose(lab.values, expect, atol=1e-12)


def test_percentile_normalize_uses_log_of_depth(rng):
    d = rng.uniform(0.5, 50, (16, 16))
    lab = percentile_normalize(d, rounding=False)
    x = np.log(d + 1e-6).ravel()
    assert lab.anchors == pytest.approx((sorted_percentile(x, 2), sorted_percentile(x, 98)), abs=1e-12)
    np.testing.assert_allclose(percentile_denormalize(lab, lab.anchors)[np.abs(lab.values) < 1], np.log(d + 1e-6)[np.abs(lab.values) < 1])


def test_percentile_degenerate_inputs():
    with pytest.raises(DegenerateInputError):
        percentile_normalize(np.full((4, 4), 3.0))
    with pytest.raises(DegenerateInputError):
        percentile_normalize(np.ones((4, 4)), np.zeros((4, 4), bool))
    with pytest.raises(DomainError):
        percentile_normalize(np.array([1e-9, 1.0, 2.0]))


@pytest.mark.parametrize("scheme", [UNI, INV, LOG], ids=lambda s: s.kind.value)
def test_roundtrip_within_worst_case(scheme, rng):
    lo = max(scheme.d_min, 1e-3)
    d = rng.uniform(lo, scheme.d_max, 100_000)
    back = decode(scheme, encode(scheme, d))
    bound, _ = worst_case_error(scheme, d)
    assert np.all(np.abs(back - d) <= bound)


def test_scaling_laws():
    depths = np.geomspace(0.1, 80, 50)
    _, rel = worst_case_error(LOG, depths)
    assert np.ptp(rel) < 1e-12
    err, _ = worst_case_error(UNI, depths)
    assert np.ptp(err) == 0
    for d in (0.3, 2.0, 17.0, 40.0):
        assert worst_case_error(INV, 2 * d)[0] / worst_case_error(INV, d)[0] == pytest.approx(4.0, abs=1e-9)


def test_delta_v_linearity():
    half = StepModel(1 / 512)
    for d in (0.1, 80.0):
        assert worst_case_error(UNI, d, half)[0] * 2 == worst_case_error(UNI, d)[0]


@given(st.floats(0.2, 60.0), st.floats(0.2, 60.0))
def test_monotonicity(d1, d2):
    v = lambda s, d: float(encode(s, d, rounding=False).values)
    if d1 < d2:
        assert v(UNI, d1) <= v(UNI, d2)
        assert v(LOG, d1) <= v(LOG, d2)
        assert v(INV, d1) >= v(INV, d2)


@given(st.floats(0.01, 100.0), st.integers(0, 2**31 - 1))
def test_percentile_normalize_scale_invariant(scale, seed):
    d = np.random.default_rng(seed).uniform(0.3, 30.0, (12, 12))
    a = percentile_normalize(d).values
    b = percentile_normalize(scale * d).values
    # identical up to one BF16 step near the band edges
    assert np.max(np.abs(a - b)) <= 1 / 128


def test_valid_entries_in_range(rng):
    d = rng.lognormal(1.0, 1.0, (20, 20))
    mask = rng.random((20, 20)) > 0.2
    lab = percentile_normalize(d, mask)
    assert np.all(np.abs(lab.values[mask]) <= 1.0)
    assert np.all(lab.values[~mask] == 0.0)


def test_error_csv(tmp_path):
    rows = error_table([LOG], [80.0, 0.1])
    write_error_csv(tmp_path / "t.csv", rows)
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "scheme,depth_m,abs_error_m,absrel"
    assert lines[1].startswith("logarithmic,80.0,1.04447")
