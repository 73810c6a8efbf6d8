import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from geoflow.errors import CorruptionError
from geoflow.io import read_depth_png16, read_pfm, read_png8, sha256_file, write_depth_png16, write_pfm, write_png8

grids = st.tuples(st.integers(1, 9), st.integers(1, 9)).flatmap(
    lambda hw: arrays(np.float32, hw, elements=st.floats(-1e6, 1e6, width=32))
)


@given(grids)
def test_pfm_roundtrip_bit_exact(tmp_path_factory, grid):
    p = tmp_path_factory.mktemp("pfm") / "g.pfm"
    write_pfm(p, grid)
    np.testing.assert_array_equal(read_pfm(p), grid)


def test_pfm_layout(tmp_path):
    g = np.array([[1.0, 2.0], [3.0, 4.0]], np.float32)
    write_pfm(tmp_path / "a.pfm", g)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"Pf\n2 2\n-1.0\n")
    # first stored row is the bottom row
    np.testing.assert_array_equal(np.frombuffer(raw[-16:], "<f4"), [3, 4, 1, 2])


def test_pfm_big_endian_and_color(tmp_path):
    g = np.arange(12, dtype=">f4").reshape(2, 2, 3)
    body = np.flipud(g).tobytes()
    (tmp_path / "b.pfm").write_bytes(b"PF\n2 2\n1.0\n" + body)
    np.testing.assert_array_equal(read_pfm(tmp_path / "b.pfm"), g.astype(np.float32))
    write_pfm(tmp_path / "c.pfm", g)
    np.testing.assert_array_equal(read_pfm(tmp_path / "c.pfm"), g)


def test_pfm_corruption(tmp_path):
    write_pfm(tmp_path / "a.pfm", np.ones((4, 4)))
    raw = (tmp_path / "a.pfm").read_bytes()
    (tmp_path / "t.pfm").write_bytes(raw[:-3])
    with pytest.raises(CorruptionError):
        read_pfm(tmp_path / "t.pfm")
    (tmp_path / "h.pfm").write_bytes(b"P6\n" + raw[3:])
    with pytest.raises(CorruptionError):
        read_pfm(tmp_path / "h.pfm")
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.ones((2, 2, 2)))


def test_png8_roundtrip(tmp_path, rng):
    g = np.rint(rng.random((7, 5)) * 255) / 255
    write_png8(tmp_path / "a.png", g)
    np.testing.assert_array_equal(read_png8(tmp_path / "a.png"), g)
    (tmp_path / "bad.png").write_bytes(b"not a png")
    with pytest.raises(CorruptionError):
        read_png8(tmp_path / "bad.png")


def test_depth_png16(tmp_path):
    d = np.array([[0.5, 1.234], [np.nan, 65.0]])
    side = write_depth_png16(tmp_path / "d.png", d)
    assert side.name == "d.json"
    back, mask = read_depth_png16(tmp_path / "d.png")
    np.testing.assert_array_equal(mask, [[True, True], [False, True]])
    np.testing.assert_allclose(back[mask], d[mask], atol=0.5e-3)
    with pytest.raises(ValueError):
        write_depth_png16(tmp_path / "e.png", np.array([[70.0]]))


def test_sha256(tmp_path):
    (tmp_path / "a").write_bytes(b"abc")
    assert sha256_file(tmp_path / "a") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
