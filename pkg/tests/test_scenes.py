import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geoflow.errors import ConfigError, ContractError, CorruptionError
from geoflow.scenes import (
    D_MAX,
    D_MIN,
    KINDS,
    Pool,
    angular_error_deg,
    consistency_error,
    draw_pools,
    generate_dataset,
    generate_scene,
    label_inside_fraction,
    load_dataset,
    normals_from_depth,
    sample_batch,
    save_dataset,
    to_float32,
)


def test_fronto_parallel_plane():
    s = generate_scene("plane", 16, 0, a=0.0, b=0.0, c=-4.0)
    np.testing.assert_array_equal(s.depth, 4.0)
    np.testing.assert_array_equal(s.normals, np.broadcast_to([0.0, 0.0, 1.0], (16, 16, 3)))


def test_sphere_apex_and_silhouette():
    res = 64
    s = generate_scene("sphere", res, 0, center=(0.0, 0.0, 3.0), radius=0.8, bg_c=6.0)
    np.testing.assert_allclose(s.normals[res // 2, res // 2], [0, 0, 1], atol=1e-15)
    # along the middle row, the last sphere pixel before the background leans toward 90 degrees
    row = s.normals[res // 2]
    on_sphere = np.abs(s.depth[res // 2] - 3.0) <= 0.8
    edge = np.flatnonzero(on_sphere)[-1]
    view_angle = np.degrees(np.arccos(row[edge, 2]))
    assert view_angle > 60
    assert np.all(np.diff(np.degrees(np.arccos(row[res // 2 : edge + 1, 2]))) > 0)


@given(st.floats(-1.0, 1.0), st.floats(-1.0, 1.0), st.floats(-6.0, -3.0))
def test_tilted_plane_normals_match_finite_differences(a, b, c):
    s = generate_scene("plane", 16, 0, a=a, b=b, c=c)
    expect = np.array([-a, -b, 1.0]) / np.sqrt(a * a + b * b + 1)
    np.testing.assert_allclose(s.normals[s.valid_mask], np.broadcast_to(expect, (s.valid_mask.sum(), 3)), atol=1e-15)
    fd = normals_from_depth(s.depth, s.pixel_size)
    inner = s.interior_mask
    assert np.max(np.abs(fd[inner] - s.normals[inner])) < 1e-6


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("pool", ["indoor", "outdoor"])
def test_scene_invariants(kind, pool):
    for seed in range(5):
        s = generate_scene(kind, 32, seed, pool)
        v = s.valid_mask
        assert v.any()
        np.testing.assert_allclose(np.linalg.norm(s.normals[v], axis=-1), 1.0, atol=1e-12)
        assert np.all((s.depth[v] >= D_MIN) & (s.depth[v] <= D_MAX))
        assert np.all(np.isnan(s.depth[~v]))
        assert np.all(s.interior_mask <= v)
        assert np.all((s.image_proxy >= 0) & (s.image_proxy <= 1))


@pytest.mark.parametrize("res,bound", [(32, 2.0), (128, 0.5)])
def test_depth_normal_consistency(res, bound):
    for kind in KINDS:
        for seed in range(4):
            err = consistency_error(generate_scene(kind, res, seed))
            assert err < bound, (kind, seed, err)


def test_interior_mask_excludes_creases_and_silhouettes():
    s = generate_scene("wedge", 32, 0, x0=0.0, c=4.0, slope=1.0, tilt=0.0)
    crease_cols = np.flatnonzero(np.abs(s.normals[16, 1:, 0] - s.normals[16, :-1, 0]) > 0)
    assert crease_cols.size
    for c in crease_cols:
        assert not s.interior_mask[:, c].any() and not s.interior_mask[:, c + 1].any()
    # without the mask, the crease breaks the finite-difference check
    fd = normals_from_depth(s.depth, s.pixel_size)
    assert angular_error_deg(fd, s.normals)[s.valid_mask].max() > 5


def test_outdoor_reaches_far_range():
    far = max(np.nanmax(generate_scene("composite", 32, s, "outdoor").depth) for s in range(10))
    assert far > 60
    near = max(np.nanmax(generate_scene("composite", 32, s).depth) for s in range(10))
    assert near <= 10


def test_generate_errors():
    with pytest.raises(ConfigError):
        generate_scene("torus", 16, 0)
    with pytest.raises(ConfigError):
        generate_scene("plane", 4, 0)


def test_sample_batch():
    rng = np.random.default_rng(0)
    indoor = [generate_scene("plane", 8, i) for i in range(3)]
    outdoor = [generate_scene("plane", 8, i, "outdoor") for i in range(2)]
    assert all(s.pool is Pool.INDOOR for s in sample_batch((indoor, outdoor), 50, rng, (1.0, 0.0)))
    a = sample_batch((indoor, outdoor), 20, np.random.default_rng(5))
    b = sample_batch((indoor, outdoor), 20, np.random.default_rng(5))
    assert [id(x) for x in a] == [id(x) for x in b]
    with pytest.raises(ContractError):
        sample_batch(([], outdoor), 3, rng)


def test_pool_fractions_binomial():
    pools = draw_pools(100_000, seed=0)
    frac = np.mean([p is Pool.INDOOR for p in pools])
    assert abs(frac - 0.9) < 0.01
    # draw_pools agrees with the pools of the rendered dataset
    assert [s.pool for s in generate_dataset(12, 8, 0)] == draw_pools(12, 0)


def test_save_load_roundtrip_and_checksums(tmp_path):
    ds = generate_dataset(4, 16, seed=3)
    m1 = save_dataset(ds, tmp_path / "a", seed=3)
    m2 = save_dataset(generate_dataset(4, 16, seed=3), tmp_path / "b", seed=3)
    assert m1 == m2
    manifest, back = load_dataset(tmp_path / "a")
    assert manifest["count"] == 4
    for s, r in zip(ds, back):
        f = to_float32(s)
        np.testing.assert_array_equal(np.nan_to_num(r.depth), np.nan_to_num(f.depth))
        np.testing.assert_array_equal(r.normals, f.normals)
        np.testing.assert_array_equal(r.image_proxy, s.image_proxy)
        np.testing.assert_array_equal(r.valid_mask, s.valid_mask)
        np.testing.assert_array_equal(r.interior_mask, s.interior_mask)
        assert r.pool is s.pool
    target = tmp_path / "a" / "scene_00001_depth.pfm"
    target.write_bytes(target.read_bytes()[:-4])
    with pytest.raises(CorruptionError):
        load_dataset(tmp_path / "a")


def test_empty_dataset(tmp_path):
    m = save_dataset([], tmp_path, seed=0)
    assert m["count"] == 0 and m["samples"] == []
    assert load_dataset(tmp_path)[1] == []


def test_label_inside_fraction_achievable_bound():
    # the 2/98 anchors leave ~4% of pixels on or beyond +-1 by construction,
    # and BF16 snaps values just inside the band onto +-1
    fr = [label_inside_fraction(s) for s in generate_dataset(40, 32, seed=0)]
    assert min(fr) >= 0.93
    assert all(0 < f <= 1 for f in fr)


@pytest.mark.xfail(strict=True, reason="2/98 percentile anchors put about 4% of pixels at +-1 by construction")
def test_label_inside_fraction_literal_96_percent():
    fr = [label_inside_fraction(s) for s in generate_dataset(40, 32, seed=0)]
    assert min(fr) >= 0.96
