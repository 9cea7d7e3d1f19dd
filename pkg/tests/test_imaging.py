import warnings

import numpy as np
import pytest

from depthfuse.core import DepthMap, RgbImage, Scale
from depthfuse.errors import ShapeMismatch, UnfillableWarning, WrongScale
from depthfuse.imaging import (
    BilateralParams,
    bilateral_smooth,
    cross_bilateral_fill,
    upsample_bilinear,
)

from tests import oracles
from tests.helpers import random_depth


def test_params_round_even_kernel():
    p = BilateralParams()
    assert (p.spatial_kernel, p.radius, p.spatial_sigma, p.range_sigma) == (11, 5, 5.0, 0.1)
    assert BilateralParams(spatial_kernel=7).spatial_kernel == 7
    with pytest.raises(ValueError):
        BilateralParams(spatial_kernel=1)
    with pytest.raises(ValueError):
        BilateralParams(range_sigma=0)


# -- upsampling ----------------------------------------------------------------

def test_upsample_factor_one_and_constant(rng):
    d = random_depth(rng)
    assert upsample_bilinear(d, 1) is d
    c = upsample_bilinear(DepthMap(np.full((3, 4), 2.5)), 3)
    assert c.shape == (9, 12)
    np.testing.assert_allclose(c.values, 2.5, rtol=1e-15)


def test_upsample_row_example():
    up = upsample_bilinear(DepthMap(np.array([[0.0, 4.0]]), scale=Scale.LOG), 2)
    np.testing.assert_allclose(up.values, [[0, 4 / 3, 8 / 3, 4]] * 2, rtol=1e-15, atol=1e-15)


def test_upsample_matches_reference(rng):
    d = random_depth(rng, (4, 5))
    for factor in (2, 3, 4):
        np.testing.assert_allclose(upsample_bilinear(d, factor).values,
                                   oracles.bilinear_reference(d.values, factor), rtol=1e-13)


def test_upsample_corners_preserved(rng):
    d = random_depth(rng, (4, 6))
    up = upsample_bilinear(d, 4)
    for y, x in [(0, 0), (0, 5), (3, 0), (3, 5)]:
        assert up.values[y * (up.height - 1) // 3, x * (up.width - 1) // 5] == pytest.approx(
            d.values[y, x], rel=1e-14)


def test_upsample_mask_rule():
    mask = np.ones((3, 3), dtype=bool)
    mask[1, 1] = False
    up = upsample_bilinear(DepthMap(np.ones((3, 3)), mask), 2)
    # output position maps to input coordinate o * 2/5; pixels touching (1, 1) are invalid
    pos = np.arange(6) * 2 / 5
    touches = (np.floor(pos) == 1) | ((np.ceil(pos) == 1) & (pos != np.floor(pos)))
    expected = ~(touches[:, None] & touches[None, :])
    np.testing.assert_array_equal(up.mask, expected)


# -- cross-bilateral fill ------------------------------------------------------

def test_fill_no_holes_is_identity(rng):
    d = random_depth(rng)
    out = cross_bilateral_fill(d, RgbImage(rng.random((6, 8, 3))))
    np.testing.assert_array_equal(out.values, d.values)


def test_fill_single_hole_constant():
    mask = np.ones((7, 7), dtype=bool)
    mask[3, 3] = False
    d = DepthMap(np.full((7, 7), 1.7), mask)
    out = cross_bilateral_fill(d, RgbImage(np.full((7, 7, 3), 0.5)))
    assert out.mask.all()
    assert out.values[3, 3] == pytest.approx(1.7, rel=1e-14)


def test_fill_respects_guide_edge():
    guide = np.zeros((9, 9, 3))
    guide[:, 5:] = 1.0
    values = np.where(np.arange(9)[None, :] < 5, 2.0, 3.0) * np.ones((9, 1))
    mask = np.ones((9, 9), dtype=bool)
    mask[4, 4] = False  # dark side, next to the bright column
    out = cross_bilateral_fill(DepthMap(values, mask), RgbImage(guide))
    # colour distance sqrt(3) gives weight exp(-150) for the bright side
    assert abs(out.values[4, 4] - 2.0) < 1e-3


def test_fill_never_changes_valid_pixels(rng):
    d = random_depth(rng, (12, 12), hole_fraction=0.4)
    out = cross_bilateral_fill(d, RgbImage(rng.random((12, 12, 3))))
    np.testing.assert_array_equal(out.values[d.mask], d.values[d.mask])
    assert out.mask.all()


def test_fill_unfillable_warns():
    mask = np.zeros((5, 5), dtype=bool)
    with pytest.warns(UnfillableWarning):
        out = cross_bilateral_fill(DepthMap(np.ones((5, 5)), mask), RgbImage(np.zeros((5, 5, 3))))
    assert not out.mask.any()


def test_fill_multiple_passes_reach_far_holes():
    mask = np.zeros((1, 30), dtype=bool)
    mask[0, 0] = True
    d = DepthMap(np.full((1, 30), 2.0), mask)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        out = cross_bilateral_fill(d, RgbImage(np.zeros((1, 30, 3))))
    assert out.mask.all()
    np.testing.assert_allclose(out.values, 2.0)


def test_fill_shape_check(rng):
    with pytest.raises(ShapeMismatch):
        cross_bilateral_fill(random_depth(rng), RgbImage(np.zeros((3, 3, 3))))


# -- bilateral smoothing -------------------------------------------------------

def test_smooth_constant_unchanged():
    d = DepthMap(np.full((8, 8), 3.0))
    np.testing.assert_allclose(bilateral_smooth(d).values, 3.0, rtol=1e-15)


def test_smooth_step_edge_preserved():
    values = np.where(np.arange(20)[None, :] < 10, 1.0, 2.0) * np.ones((12, 1))
    out = bilateral_smooth(DepthMap(values)).values
    far = np.abs(np.arange(20) - 9.5) >= 2
    assert np.max(np.abs(out - values)[:, far]) < 1e-3


def test_smooth_matches_reference(rng):
    d = random_depth(rng, (9, 10), hole_fraction=0.2, lo=1.0, hi=1.5)
    p = BilateralParams(spatial_kernel=5, spatial_sigma=2.0, range_sigma=0.2)
    out = bilateral_smooth(d, p)
    ref = oracles.bilateral_reference(d.values, d.mask, 5, 2.0, 0.2)
    np.testing.assert_array_equal(out.mask, d.mask)
    np.testing.assert_allclose(out.values[d.mask], ref[d.mask], rtol=0, atol=1e-10)


def test_smooth_is_convex_combination(rng):
    d = random_depth(rng, (10, 10), hole_fraction=0.1)
    out = bilateral_smooth(d, BilateralParams(spatial_kernel=3, range_sigma=1.0))
    v = np.where(d.mask, d.values, np.nan)
    padded = np.pad(v, 1, constant_values=np.nan)
    for y, x in zip(*np.nonzero(d.mask)):
        win = padded[y:y + 3, x:x + 3]
        assert np.nanmin(win) - 1e-12 <= out.values[y, x] <= np.nanmax(win) + 1e-12


def test_smooth_requires_linear():
    with pytest.raises(WrongScale):
        bilateral_smooth(DepthMap(np.zeros((3, 3)), scale=Scale.LOG))


def test_upsample_then_subsample_round_trip(rng):
    # input pixels land on output pixels when (n - 1) divides (factor - 1)
    for shape, factor in (((4, 4), 4), ((3, 3), 3), ((5, 3), 5), ((2, 4), 4)):
        d = random_depth(rng, shape, hole_fraction=0.2)
        up = upsample_bilinear(d, factor)
        ys = np.arange(shape[0]) * (up.height - 1) // (shape[0] - 1)
        xs = np.arange(shape[1]) * (up.width - 1) // (shape[1] - 1)
        np.testing.assert_array_equal(up.mask[np.ix_(ys, xs)], d.mask)
        np.testing.assert_array_equal(up.values[np.ix_(ys, xs)][d.mask], d.values[d.mask])
