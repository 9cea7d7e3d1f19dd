"""Post-processing filters for depth maps.

* ``upsample_bilinear``: align-corners bilinear resampling by an integer factor.
* ``cross_bilateral_fill``: fills holes from valid neighbours, weighting them by
  spatial distance and by colour similarity in a guide image.
* ``bilateral_smooth``: plain bilateral filter, range weights from depth itself.

The window loops run over offsets in a fixed order, so results are
bit-reproducible.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from depthfuse.core import DepthMap, RgbImage, Scale
from depthfuse.errors import ShapeMismatch, UnfillableWarning, WrongScale

MAX_FILL_PASSES = 20


@dataclass(frozen=True)
class BilateralParams:
    """Window and Gaussian widths for the bilateral filters.

    The defaults describe a 10 x 10 spatial Gaussian with a 0.1 m range sigma.
    Even window sizes are rounded up to the next odd size so the window can be
    centred (10 becomes 11); the spatial sigma stays at 10 / 2 = 5 px.
    ``color_sigma`` is the guide-colour width used by the hole filler
    (RGB Euclidean distance, channels in [0, 1]).
    """

    spatial_kernel: int = 10
    spatial_sigma: float = 5.0
    range_sigma: float = 0.1
    color_sigma: float = 0.1

    def __post_init__(self):
        k = int(self.spatial_kernel)
        if k % 2 == 0:
            k += 1
        if k < 3:
            raise ValueError("spatial_kernel must be at least 3")
        if min(self.spatial_sigma, self.range_sigma, self.color_sigma) <= 0:
            raise ValueError("bilateral sigmas must be positive")
        object.__setattr__(self, "spatial_kernel", k)

    @property
    def radius(self) -> int:
        return self.spatial_kernel // 2


def _offsets(radius: int):
    for dy in range(-radius, radius + 1):
        for dx in range(-radius, radius + 1):
            yield dy, dx


def _shifted(a: np.ndarray, dy: int, dx: int, fill) -> np.ndarray:
    """``out[y, x] = a[y + dy, x + dx]``, ``fill`` outside the array."""
    h, w = a.shape[:2]
    out = np.full_like(a, fill)
    ys, ye = max(0, -dy), min(h, h - dy)
    xs, xe = max(0, -dx), min(w, w - dx)
    if ys < ye and xs < xe:
        out[ys:ye, xs:xe] = a[ys + dy:ye + dy, xs + dx:xe + dx]
    return out


def upsample_bilinear(d: DepthMap, factor: int) -> DepthMap:
    """Resample to ``(H * factor, W * factor)`` with corners aligned.

    An output pixel is valid iff every input tap with non-zero weight is valid.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError("factor must be a positive integer")
    if factor == 1:
        return d
    h, w = d.shape
    oh, ow = h * factor, w * factor

    def axis_taps(n_in, n_out):
        if n_in == 1:
            pos = np.zeros(n_out)
        else:
            pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
        i0 = np.minimum(np.floor(pos).astype(int), n_in - 1)
        i1 = np.minimum(i0 + 1, n_in - 1)
        return i0, i1, pos - i0

    y0, y1, fy = axis_taps(h, oh)
    x0, x1, fx = axis_taps(w, ow)
    fy = fy[:, None]
    fx = fx[None, :]
    taps = [
        ((1 - fy) * (1 - fx), y0[:, None], x0[None, :]),
        ((1 - fy) * fx, y0[:, None], x1[None, :]),
        (fy * (1 - fx), y1[:, None], x0[None, :]),
        (fy * fx, y1[:, None], x1[None, :]),
    ]
    values = np.zeros((oh, ow))
    mask = np.ones((oh, ow), dtype=bool)
    for weight, yi, xi in taps:
        used = weight != 0
        tap_valid = d.mask[yi, xi]
        mask &= tap_valid | ~used
        values += np.where(used & tap_valid, weight * d.values[yi, xi], 0.0)
    return DepthMap(values, mask, d.scale)


def _spatial_weight(dy: int, dx: int, sigma: float) -> float:
    return float(np.exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma)))


def cross_bilateral_fill(d: DepthMap, guide: RgbImage,
                         params: BilateralParams = BilateralParams()) -> DepthMap:
    """Fill invalid pixels with a guide-weighted mean of valid neighbours.

    Each pass fills every invalid pixel that has at least one valid pixel in
    its window, using only pixels valid at the start of the pass.  Passes
    repeat until nothing is left to fill or ``MAX_FILL_PASSES`` is reached;
    valid input pixels are never modified.  Leftover holes trigger an
    :class:`UnfillableWarning`.
    """
    if guide.shape != d.shape:
        raise ShapeMismatch(f"guide shape {guide.shape} != depth shape {d.shape}")
    values = d.values.copy()
    mask = d.mask.copy()
    rgb = guide.values
    inv_two_c2 = 1.0 / (2.0 * params.color_sigma ** 2)
    for _ in range(MAX_FILL_PASSES):
        holes = ~mask
        if not holes.any():
            break
        num = np.zeros_like(values)
        den = np.zeros_like(values)
        for dy, dx in _offsets(params.radius):
            nb_valid = _shifted(mask, dy, dx, False)
            nb_val = _shifted(values, dy, dx, 0.0)
            nb_rgb = _shifted(rgb, dy, dx, 0.0)
            colour_d2 = np.sum((nb_rgb - rgb) ** 2, axis=2)
            wgt = _spatial_weight(dy, dx, params.spatial_sigma) * np.exp(-colour_d2 * inv_two_c2)
            wgt = np.where(nb_valid & holes, wgt, 0.0)
            num += wgt * nb_val
            den += wgt
        fillable = holes & (den > 0)
        if not fillable.any():
            break
        values[fillable] = num[fillable] / den[fillable]
        mask |= fillable
    remaining = int(np.count_nonzero(~mask))
    if remaining:
        warnings.warn(f"{remaining} pixels could not be filled", UnfillableWarning, stacklevel=2)
    return DepthMap(values, mask, d.scale)


def bilateral_smooth(d: DepthMap, params: BilateralParams = BilateralParams()) -> DepthMap:
    """Edge-preserving smoothing; only valid window taps contribute."""
    if d.scale is not Scale.LINEAR:
        raise WrongScale("bilateral_smooth works on linear depth (range sigma is in meters)")
    values, mask = d.values, d.mask
    inv_two_r2 = 1.0 / (2.0 * params.range_sigma ** 2)
    num = np.zeros_like(values)
    den = np.zeros_like(values)
    for dy, dx in _offsets(params.radius):
        nb_valid = _shifted(mask, dy, dx, False)
        nb_val = _shifted(values, dy, dx, 0.0)
        wgt = _spatial_weight(dy, dx, params.spatial_sigma) * np.exp(
            -((nb_val - values) ** 2) * inv_two_r2)
        wgt = np.where(nb_valid, wgt, 0.0)
        num += wgt * nb_val
        den += wgt
    out = np.where(mask, num / np.where(mask, den, 1.0), 0.0)
    return DepthMap(out, mask, d.scale)
