import struct
import zlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from depthfuse.core import GradientMap, RgbImage, Scale
from depthfuse.errors import BadMagic, ChecksumMismatch, Malformed, Truncated, WrongScale
from depthfuse.raster_io import (
    HEADER_SIZE,
    MAGIC,
    RasterKind,
    decode_raster,
    encode_raster,
    export_pfm,
    import_pfm,
    read_depth,
    read_gradients,
    read_mask,
    read_raster,
    read_rgb,
    write_depth,
    write_gradients,
    write_mask,
    write_rgb,
)

from tests.helpers import random_depth, random_gradients


def test_header_layout():
    data = np.array([[1.0, 2.0, 3.0]], dtype=np.float32)
    blob = encode_raster(RasterKind.DEPTH, data, Scale.LOG)
    assert HEADER_SIZE == 20 and len(blob) == 20 + 12
    magic, kind, scale, reserved, h, w, crc = struct.unpack("<4sBBHIII", blob[:20])
    assert (magic, kind, scale, reserved, h, w) == (MAGIC, 0, 1, 0, 1, 3)
    assert crc == zlib.crc32(blob[20:])
    assert blob[20:] == data.astype("<f4").tobytes()


@settings(max_examples=30, deadline=None)
@given(arrays(np.float32, st.tuples(st.integers(1, 6), st.integers(1, 6)),
              elements=st.floats(width=32, allow_nan=True, allow_infinity=True)))
def test_float_round_trip_bit_exact(data):
    r = decode_raster(encode_raster(RasterKind.GRADIENT_X, data))
    assert r.data.tobytes() == data.tobytes()


def test_depth_round_trip(tmp_path, rng):
    for scale in Scale:
        d = random_depth(rng, (7, 9), scale=scale, hole_fraction=0.2)
        d32 = d.replace(values=d.values.astype(np.float32))
        write_depth(tmp_path / "d.gfr", d32)
        back = read_depth(tmp_path / "d.gfr")
        assert back.scale is scale
        np.testing.assert_array_equal(back.mask, d.mask)
        np.testing.assert_array_equal(back.values, d32.values)
        write_depth(tmp_path / "e.gfr", back)
        assert (tmp_path / "d.gfr").read_bytes() == (tmp_path / "e.gfr").read_bytes()


def test_gradient_mask_rgb_round_trip(tmp_path, rng):
    g = random_gradients(rng, hole_fraction=0.2, scale=Scale.LOG)
    g32 = GradientMap(g.gx.astype(np.float32), g.gy.astype(np.float32), g.mask, g.scale)
    write_gradients(tmp_path / "x.gfr", tmp_path / "y.gfr", g32)
    back = read_gradients(tmp_path / "x.gfr", tmp_path / "y.gfr")
    np.testing.assert_array_equal(back.gx, g32.gx)
    np.testing.assert_array_equal(back.mask, g.mask)
    assert back.scale is Scale.LOG

    mask = rng.random((5, 6)) > 0.5
    write_mask(tmp_path / "m.gfr", mask)
    np.testing.assert_array_equal(read_mask(tmp_path / "m.gfr"), mask)

    levels = rng.integers(0, 256, (4, 5, 3))
    img = RgbImage(levels / 255.0)
    write_rgb(tmp_path / "c.gfr", img)
    np.testing.assert_array_equal(read_rgb(tmp_path / "c.gfr").values, img.values)
    assert read_raster(tmp_path / "c.gfr").kind is RasterKind.RGB


def test_corruption_detected(rng):
    blob = encode_raster(RasterKind.DEPTH, rng.random((4, 4)).astype(np.float32))
    with pytest.raises(Truncated):
        decode_raster(blob[:-1])
    with pytest.raises(Truncated):
        decode_raster(blob[:10])
    with pytest.raises(BadMagic):
        decode_raster(b"XXXX" + blob[4:])
    bad_crc = bytearray(blob)
    bad_crc[16] ^= 0xFF
    with pytest.raises(ChecksumMismatch):
        decode_raster(bytes(bad_crc))
    with pytest.raises(Malformed):
        decode_raster(blob + b"\0")
    with pytest.raises(Malformed):
        decode_raster(blob[:4] + bytes([9]) + blob[5:])


def test_every_payload_byte_corruption_detected(rng):
    blob = encode_raster(RasterKind.DEPTH, rng.random((3, 3)).astype(np.float32))
    for i in range(HEADER_SIZE, len(blob)):
        b = bytearray(blob)
        b[i] ^= 0x01
        with pytest.raises(ChecksumMismatch):
            decode_raster(bytes(b))


def test_wrong_kind_rejected(tmp_path):
    write_mask(tmp_path / "m.gfr", np.ones((3, 3), dtype=bool))
    with pytest.raises(Malformed):
        read_depth(tmp_path / "m.gfr")


def test_atomic_write_leaves_no_temp_files(tmp_path, rng):
    write_depth(tmp_path / "d.gfr", random_depth(rng))
    assert [p.name for p in tmp_path.iterdir()] == ["d.gfr"]


# -- PFM -----------------------------------------------------------------------

def test_pfm_round_trip(tmp_path, rng):
    d = random_depth(rng, (5, 7), hole_fraction=0.2)
    d32 = d.replace(values=d.values.astype(np.float32))
    export_pfm(tmp_path / "d.pfm", d32)
    back = import_pfm(tmp_path / "d.pfm")
    np.testing.assert_array_equal(back.mask, d.mask)
    np.testing.assert_array_equal(back.values[d.mask], d32.values[d.mask])
    with pytest.raises(WrongScale):
        export_pfm(tmp_path / "l.pfm", random_depth(rng, scale=Scale.LOG))


def test_pfm_hand_written_fixtures(tmp_path):
    # 3x2, bottom row stored first
    top, bottom = [1.0, 2.0, 3.0], [4.0, np.nan, -1.0]
    le = b"Pf\n3 2\n-1.0\n" + np.array(bottom + top, dtype="<f4").tobytes()
    (tmp_path / "le.pfm").write_bytes(le)
    d = import_pfm(tmp_path / "le.pfm")
    np.testing.assert_array_equal(d.values[0], top)
    assert d.mask.tolist() == [[True, True, True], [True, False, False]]
    assert d.values[1, 0] == 4.0

    be = b"Pf\n3 2\n1.0\n" + np.array(bottom + top, dtype=">f4").tobytes()
    (tmp_path / "be.pfm").write_bytes(be)
    np.testing.assert_array_equal(import_pfm(tmp_path / "be.pfm").values, d.values)


def test_pfm_malformed(tmp_path):
    (tmp_path / "c.pfm").write_bytes(b"PF\n1 1\n-1.0\n" + b"\0" * 12)
    with pytest.raises(Malformed):
        import_pfm(tmp_path / "c.pfm")
    (tmp_path / "s.pfm").write_bytes(b"Pf\n2 2\n-1.0\n" + b"\0" * 8)
    with pytest.raises(Malformed):
        import_pfm(tmp_path / "s.pfm")
