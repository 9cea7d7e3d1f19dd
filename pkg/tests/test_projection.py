import numpy as np
import pytest

from depthfuse.core import CameraIntrinsics, DepthMap, RgbImage, Scale
from depthfuse.errors import ShapeMismatch, WrongScale
from depthfuse.projection import PointCloud, backproject, ply_bytes, project, write_ply

from tests.helpers import random_depth


def test_principal_ray():
    k = CameraIntrinsics(120.0, 90.0, 3.0, 2.0)
    v = np.full((5, 7), 9.0)
    v[2, 3] = 1.75
    cloud = backproject(DepthMap(v), k)
    idx = 2 * 7 + 3
    np.testing.assert_array_equal(cloud.points[idx], [0.0, 0.0, 1.75])


def test_formula_example():
    k = CameraIntrinsics(100.0, 100.0, 0.0, 0.0)
    v = np.ones((1, 51))
    v[0, 50] = 2.0
    cloud = backproject(DepthMap(v), k)
    np.testing.assert_allclose(cloud.points[50], [1.0, 0.0, 2.0], rtol=1e-15)


def test_empty_and_count(rng):
    k = CameraIntrinsics.synthetic(6, 8)
    empty = backproject(DepthMap(np.ones((6, 8)), np.zeros((6, 8), dtype=bool)), k)
    assert len(empty) == 0 and empty.points.shape == (0, 3)
    d = random_depth(rng, hole_fraction=0.3)
    assert len(backproject(d, k)) == d.n_valid


def test_row_major_order(rng):
    d = random_depth(rng, hole_fraction=0.3)
    cloud = backproject(d, CameraIntrinsics.synthetic(6, 8))
    np.testing.assert_array_equal(cloud.points[:, 2], d.values[d.mask])


def test_scaling_and_round_trip(rng):
    k = CameraIntrinsics(525.0, 520.0, 3.4, 2.1)
    d = random_depth(rng, (6, 8), hole_fraction=0.2)
    a = backproject(d, k)
    b = backproject(d.replace(values=2 * d.values), k)
    np.testing.assert_allclose(b.points, 2 * a.points, rtol=1e-15, atol=1e-15)
    uv = project(a.points, k)
    v, u = np.nonzero(d.mask)
    assert np.max(np.abs(uv - np.stack([u, v], axis=1))) < 1e-9


def test_errors(rng):
    k = CameraIntrinsics.synthetic(6, 8)
    with pytest.raises(WrongScale):
        backproject(random_depth(rng, scale=Scale.LOG), k)
    with pytest.raises(ShapeMismatch):
        backproject(random_depth(rng), k, RgbImage(np.zeros((2, 2, 3))))


def test_ply_layout():
    cloud = PointCloud(np.array([[0.5, -1.0, 2.0], [1.0 / 3, 0.0, 1.0]]),
                       np.array([[1.0, 0.0, 0.5], [0.2, 0.4, 0.6]]))
    text = ply_bytes(cloud).decode("ascii")
    assert text == ("ply\nformat ascii 1.0\nelement vertex 2\n"
                    "property float x\nproperty float y\nproperty float z\n"
                    "property uchar red\nproperty uchar green\nproperty uchar blue\n"
                    "end_header\n"
                    "0.5 -1 2 255 0 128\n0.333333343 0 1 51 102 153\n")
    plain = ply_bytes(PointCloud(np.zeros((0, 3)))).decode("ascii")
    assert plain.endswith("element vertex 0\nproperty float x\nproperty float y\n"
                          "property float z\nend_header\n")


def test_ply_deterministic(tmp_path, rng):
    d = random_depth(rng, hole_fraction=0.2)
    img = RgbImage(rng.random((6, 8, 3)))
    cloud = backproject(d, CameraIntrinsics.synthetic(6, 8), img)
    write_ply(tmp_path / "a.ply", cloud)
    write_ply(tmp_path / "b.ply", backproject(d, CameraIntrinsics.synthetic(6, 8), img))
    assert (tmp_path / "a.ply").read_bytes() == (tmp_path / "b.ply").read_bytes()
    lines = (tmp_path / "a.ply").read_text().splitlines()
    body = lines[lines.index("end_header") + 1:]
    assert len(body) == d.n_valid
    parsed = np.array([[float(t) for t in ln.split()[:3]] for ln in body])
    np.testing.assert_array_equal(parsed.astype(np.float32), cloud.points.astype(np.float32))
