"""Raster data model: depth maps, gradient maps, masks, RGB guides, intrinsics.

All containers are frozen dataclasses over read-only numpy arrays.  Values at
invalid pixels are stored as 0 and are never used numerically.  Flattening is
row-major (``p = y * width + x``) throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np

from depthfuse.errors import NonPositiveDepth, ShapeMismatch, WrongScale


class Scale(enum.Enum):
    LINEAR = "linear"
    LOG = "log"


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


def _check_shape(*arrays: np.ndarray) -> None:
    shape = arrays[0].shape
    for a in arrays[1:]:
        if a.shape != shape:
            raise ShapeMismatch(f"shape {a.shape} does not match {shape}")


def valid_intersection(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Per-pixel AND of two validity masks."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    _check_shape(a, b)
    return a & b


def valid_count(mask: np.ndarray) -> int:
    return int(np.count_nonzero(mask))


@dataclass(frozen=True, eq=False)
class DepthMap:
    """A 2D depth raster with a validity mask and a scale tag.

    ``values`` are meters for ``Scale.LINEAR`` and natural-log meters for
    ``Scale.LOG``.  When ``mask`` is omitted every finite pixel is valid.
    """

    values: np.ndarray
    mask: Optional[np.ndarray] = None
    scale: Scale = Scale.LINEAR

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 2:
            raise ShapeMismatch(f"depth map must be 2D, got shape {values.shape}")
        if self.mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.array(self.mask, dtype=bool)
            _check_shape(values, mask)
        if not np.all(np.isfinite(values[mask])):
            raise ValueError("depth map has non-finite values at valid pixels")
        if self.scale is Scale.LINEAR and np.any(values[mask] <= 0):
            raise NonPositiveDepth("linear depth must be > 0 at valid pixels")
        values[~mask] = 0.0
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "scale", Scale(self.scale))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def n_valid(self) -> int:
        return valid_count(self.mask)

    def replace(self, values=None, mask=None, scale=None) -> "DepthMap":
        return DepthMap(
            self.values if values is None else values,
            self.mask if mask is None else mask,
            self.scale if scale is None else scale,
        )


@dataclass(frozen=True, eq=False)
class GradientMap:
    """Paired x/y depth derivatives sharing one validity mask."""

    gx: np.ndarray
    gy: np.ndarray
    mask: Optional[np.ndarray] = None
    scale: Scale = Scale.LINEAR

    def __post_init__(self):
        gx = np.array(self.gx, dtype=np.float64)
        gy = np.array(self.gy, dtype=np.float64)
        if gx.ndim != 2:
            raise ShapeMismatch(f"gradient map must be 2D, got shape {gx.shape}")
        _check_shape(gx, gy)
        if self.mask is None:
            mask = np.isfinite(gx) & np.isfinite(gy)
        else:
            mask = np.array(self.mask, dtype=bool)
            _check_shape(gx, mask)
        if not (np.all(np.isfinite(gx[mask])) and np.all(np.isfinite(gy[mask]))):
            raise ValueError("gradient map has non-finite values at valid pixels")
        gx[~mask] = 0.0
        gy[~mask] = 0.0
        object.__setattr__(self, "gx", _frozen(gx))
        object.__setattr__(self, "gy", _frozen(gy))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "scale", Scale(self.scale))

    @property
    def shape(self) -> tuple[int, int]:
        return self.gx.shape

    @property
    def n_valid(self) -> int:
        return valid_count(self.mask)

    def stacked(self) -> np.ndarray:
        """Return a ``(2, H, W)`` array ``[gx, gy]``."""
        return np.stack([self.gx, self.gy])


@dataclass(frozen=True, eq=False)
class RgbImage:
    """``(H, W, 3)`` colour image, values clamped to [0, 1]."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 3 or values.shape[2] != 3:
            raise ShapeMismatch(f"RGB image must be (H, W, 3), got {values.shape}")
        object.__setattr__(self, "values", _frozen(np.clip(values, 0.0, 1.0)))

    @property
    def shape(self) -> tuple[int, int]:
        return self.values.shape[:2]


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @classmethod
    def synthetic(cls, height: int, width: int) -> "CameraIntrinsics":
        """Made-up pinhole with fx = fy = width and a centred principal point.

        Not a real sensor calibration; supply measured intrinsics for real data.
        """
        return cls(float(width), float(width), (width - 1) / 2.0, (height - 1) / 2.0)


def to_log(d: DepthMap) -> DepthMap:
    if d.scale is not Scale.LINEAR:
        raise WrongScale("to_log expects a linear-scale depth map")
    if np.any(d.values[d.mask] <= 0):
        raise NonPositiveDepth("cannot take log of non-positive depth")
    out = np.zeros_like(d.values)
    out[d.mask] = np.log(d.values[d.mask])
    return DepthMap(out, d.mask, Scale.LOG)


def to_linear(d: DepthMap) -> DepthMap:
    if d.scale is not Scale.LOG:
        raise WrongScale("to_linear expects a log-scale depth map")
    out = np.zeros_like(d.values)
    out[d.mask] = np.exp(d.values[d.mask])
    return DepthMap(out, d.mask, Scale.LINEAR)


def require_same_grid(*maps) -> None:
    """Raise ShapeMismatch unless every map has the same (H, W)."""
    shapes = {m.shape for m in maps}
    if len(shapes) > 1:
        raise ShapeMismatch(f"maps have differing shapes: {sorted(shapes)}")


def require_same_scale(*maps) -> None:
    scales = {m.scale for m in maps}
    if len(scales) > 1:
        raise WrongScale(f"maps have differing scales: {sorted(s.value for s in scales)}")
