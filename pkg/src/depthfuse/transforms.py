"""Augmentation transforms and the realignment map between two of them.

Only a horizontal flip (mirror about the vertical axis) and a colour jitter are
supported.  Colour changes leave geometry untouched, so on depth and gradient
maps they act as the identity.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from depthfuse.core import DepthMap, GradientMap, RgbImage

GAMMA_RANGE = (0.8, 1.2)


class TransformKind(enum.Enum):
    IDENTITY = "identity"
    FLIP = "flip"
    COLOUR = "colour"


@dataclass(frozen=True)
class AugTransform:
    """One augmentation.

    For ``COLOUR``, the forward map on an image channel ``x`` is::

        y = clip(gamma_k * ((x + brightness_delta - 0.5) * contrast_factor + 0.5))

    ``inverted`` marks the algebraic inverse of that map (clipping aside).
    """

    kind: TransformKind = TransformKind.IDENTITY
    brightness_delta: float = 0.0
    contrast_factor: float = 1.0
    gamma_rgb: tuple[float, float, float] = (1.0, 1.0, 1.0)
    inverted: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", TransformKind(self.kind))
        gamma = tuple(float(g) for g in self.gamma_rgb)
        if len(gamma) != 3:
            raise ValueError("gamma_rgb needs three components")
        lo, hi = GAMMA_RANGE
        if any(not lo <= g <= hi for g in gamma):
            raise ValueError(f"gamma_rgb components must lie in [{lo}, {hi}], got {gamma}")
        if self.contrast_factor <= 0:
            raise ValueError("contrast_factor must be positive")
        object.__setattr__(self, "gamma_rgb", gamma)

    @classmethod
    def identity(cls) -> "AugTransform":
        return cls(TransformKind.IDENTITY)

    @classmethod
    def flip(cls) -> "AugTransform":
        return cls(TransformKind.FLIP)

    @classmethod
    def colour(cls, brightness_delta=0.0, contrast_factor=1.0, gamma_rgb=(1.0, 1.0, 1.0)):
        return cls(TransformKind.COLOUR, brightness_delta, contrast_factor, tuple(gamma_rgb))

    @property
    def is_spatial(self) -> bool:
        return self.kind is TransformKind.FLIP


def inverse(t: AugTransform) -> AugTransform:
    if t.kind is TransformKind.COLOUR:
        return AugTransform(t.kind, t.brightness_delta, t.contrast_factor, t.gamma_rgb,
                            inverted=not t.inverted)
    return t


@dataclass(frozen=True)
class TransformMapping:
    """``g = source o inverse(target)``: brings the output for ``target`` into
    the frame of ``source``."""

    source_transform: AugTransform
    target_transform: AugTransform

    def inverse(self) -> "TransformMapping":
        return TransformMapping(self.target_transform, self.source_transform)


def _permute(t: AugTransform, a: np.ndarray) -> np.ndarray:
    """Apply the spatial part of ``t`` to an array whose last two axes are (H, W)."""
    if t.kind is TransformKind.FLIP:
        return a[..., ::-1]
    return a


def apply_to_image(t: AugTransform, img: RgbImage) -> RgbImage:
    x = img.values
    if t.kind is TransformKind.IDENTITY:
        return img
    if t.kind is TransformKind.FLIP:
        return RgbImage(x[:, ::-1, :])
    gamma = np.asarray(t.gamma_rgb)
    if not t.inverted:
        y = gamma * ((x + t.brightness_delta - 0.5) * t.contrast_factor + 0.5)
    else:
        y = (x / gamma - 0.5) / t.contrast_factor + 0.5 - t.brightness_delta
    return RgbImage(y)


def apply_to_depth(t: AugTransform, d: DepthMap) -> DepthMap:
    if not t.is_spatial:
        return d
    return DepthMap(_permute(t, d.values), _permute(t, d.mask), d.scale)


def apply_to_gradients(t: AugTransform, g: GradientMap) -> GradientMap:
    """Mirror both channels; the x-derivative also flips sign under a mirror."""
    if not t.is_spatial:
        return g
    return GradientMap(-_permute(t, g.gx), _permute(t, g.gy), _permute(t, g.mask), g.scale)


def realign(m: TransformMapping, d: DepthMap) -> DepthMap:
    return apply_to_depth(m.source_transform, apply_to_depth(inverse(m.target_transform), d))


def realign_array(m: TransformMapping, a: np.ndarray) -> np.ndarray:
    """Realign a raw (..., H, W) array; used to pull loss gradients back."""
    return _permute(m.source_transform, _permute(inverse(m.target_transform), a))
