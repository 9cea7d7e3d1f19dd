"""Synthetic ground-truth scenes and noisy "network estimates" of them.

Randomness comes from numpy's PCG64 bit generator seeded through
``numpy.random.SeedSequence(seed)``; the same seed gives the same output on
every platform numpy supports.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from depthfuse.core import DepthMap, GradientMap, Scale
from depthfuse.errors import BadSpec

PRNG_NAME = "numpy PCG64 via SeedSequence"


class SceneKind(enum.Enum):
    FRONTAL_PLANE = "plane"
    RAMP_X = "ramp"
    BOX = "box"
    STAIRCASE = "staircase"


@dataclass(frozen=True)
class SceneSpec:
    """Scene parameters.  Which fields matter depends on ``kind``:

    * plane: ``depth``
    * ramp: ``near`` at x = 0 rising linearly to ``far`` at x = width - 1
    * box: ``bg_depth`` everywhere, ``box_depth`` inside ``rect``
      ``(x0, y0, x1, y1)``, half-open
    * staircase: ``levels`` vertical bands stepping from ``near`` to ``far``
    """

    kind: SceneKind
    height: int = 64
    width: int = 64
    seed: int = 0
    depth: float = 2.0
    near: float = 1.0
    far: float = 3.0
    bg_depth: float = 3.0
    box_depth: float = 1.5
    rect: Optional[tuple[int, int, int, int]] = None
    levels: int = 4

    def __post_init__(self):
        object.__setattr__(self, "kind", SceneKind(self.kind))
        if self.height < 3 or self.width < 3:
            raise BadSpec("scenes must be at least 3x3")
        depths = {
            SceneKind.FRONTAL_PLANE: (self.depth,),
            SceneKind.RAMP_X: (self.near, self.far),
            SceneKind.BOX: (self.bg_depth, self.box_depth),
            SceneKind.STAIRCASE: (self.near, self.far),
        }[self.kind]
        if any(not (math.isfinite(v) and v > 0) for v in depths):
            raise BadSpec(f"scene depths must be positive, got {depths}")
        if self.kind is SceneKind.BOX:
            x0, y0, x1, y1 = self.box_rect
            if not (0 <= x0 < x1 <= self.width and 0 <= y0 < y1 <= self.height):
                raise BadSpec(f"box rect {self.box_rect} outside {self.width}x{self.height}")
        if self.kind is SceneKind.STAIRCASE and not 2 <= self.levels <= self.width:
            raise BadSpec(f"staircase needs 2..width levels, got {self.levels}")

    @property
    def box_rect(self) -> tuple[int, int, int, int]:
        if self.rect is not None:
            return tuple(int(v) for v in self.rect)
        w, h = self.width, self.height
        return (w // 4, h // 4, w - w // 4, h - h // 4)

    def depth_at(self, x: np.ndarray, y: np.ndarray) -> np.ndarray:
        """Scene depth at integer pixel coordinates (any broadcastable arrays)."""
        x, y = np.broadcast_arrays(np.asarray(x, dtype=float), np.asarray(y, dtype=float))
        if self.kind is SceneKind.FRONTAL_PLANE:
            return np.full(x.shape, float(self.depth))
        if self.kind is SceneKind.RAMP_X:
            return self.near + self.ramp_slope * x
        if self.kind is SceneKind.BOX:
            x0, y0, x1, y1 = self.box_rect
            inside = (x >= x0) & (x < x1) & (y >= y0) & (y < y1)
            return np.where(inside, float(self.box_depth), float(self.bg_depth))
        band = np.floor(x * self.levels / self.width)
        return self.near + (self.far - self.near) * band / (self.levels - 1)

    @property
    def ramp_slope(self) -> float:
        return (self.far - self.near) / (self.width - 1)


@dataclass(frozen=True)
class NoiseSpec:
    depth_sigma: float = 0.0
    gradient_sigma: float = 0.0
    hole_fraction: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.depth_sigma < 0 or self.gradient_sigma < 0:
            raise BadSpec("noise sigmas must be non-negative")
        if not 0 <= self.hole_fraction < 1:
            raise BadSpec("hole_fraction must lie in [0, 1)")


def random_scene(kind: SceneKind, height: int = 64, width: int = 64, seed: int = 0) -> SceneSpec:
    """Draw scene parameters of the given kind from ``seed``."""
    kind = SceneKind(kind)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    if kind is SceneKind.FRONTAL_PLANE:
        return SceneSpec(kind, height, width, seed, depth=float(rng.uniform(1.0, 4.0)))
    if kind is SceneKind.RAMP_X:
        near = float(rng.uniform(1.0, 2.0))
        return SceneSpec(kind, height, width, seed, near=near, far=near + float(rng.uniform(0.5, 2.0)))
    if kind is SceneKind.BOX:
        bw = int(rng.integers(max(1, width // 4), max(2, width // 2) + 1))
        bh = int(rng.integers(max(1, height // 4), max(2, height // 2) + 1))
        x0 = int(rng.integers(0, width - bw + 1))
        y0 = int(rng.integers(0, height - bh + 1))
        return SceneSpec(kind, height, width, seed,
                         bg_depth=float(rng.uniform(2.5, 4.0)),
                         box_depth=float(rng.uniform(1.0, 2.0)),
                         rect=(x0, y0, x0 + bw, y0 + bh))
    levels = int(rng.integers(3, 7))
    near = float(rng.uniform(1.0, 1.5))
    return SceneSpec(kind, height, width, seed, near=near,
                     far=near + float(rng.uniform(1.0, 2.5)), levels=levels)


def _stencil_of(f: Callable[[np.ndarray, np.ndarray], np.ndarray], h: int, w: int):
    """x/y derivatives of a pointwise scene function under the [-1, 0, 1]
    convention, one-sided and doubled at the borders."""
    y, x = np.mgrid[0:h, 0:w].astype(float)
    xl = np.where(x == 0, 0.0, np.where(x == w - 1, w - 2.0, x - 1))
    xr = np.where(x == 0, 1.0, np.where(x == w - 1, w - 1.0, x + 1))
    xs = np.where((x == 0) | (x == w - 1), 2.0, 1.0)
    yl = np.where(y == 0, 0.0, np.where(y == h - 1, h - 2.0, y - 1))
    yr = np.where(y == 0, 1.0, np.where(y == h - 1, h - 1.0, y + 1))
    ys = np.where((y == 0) | (y == h - 1), 2.0, 1.0)
    return xs * (f(xr, y) - f(xl, y)), ys * (f(x, yr) - f(x, yl))


def generate(spec: SceneSpec) -> tuple[DepthMap, GradientMap]:
    """Ground-truth linear depth and its exact gradient for ``spec``."""
    h, w = spec.height, spec.width
    y, x = np.mgrid[0:h, 0:w]
    depth = spec.depth_at(x, y)
    if spec.kind is SceneKind.FRONTAL_PLANE:
        gx = gy = np.zeros((h, w))
    elif spec.kind is SceneKind.RAMP_X:
        gx, gy = np.full((h, w), 2.0 * spec.ramp_slope), np.zeros((h, w))
    else:
        gx, gy = _stencil_of(spec.depth_at, h, w)
    return DepthMap(depth, scale=Scale.LINEAR), GradientMap(gx, gy, scale=Scale.LINEAR)


def hole_count(hole_fraction: float, n_pixels: int) -> int:
    # the small guard keeps e.g. 0.29 * 100 from flooring to 28
    return int(math.floor(hole_fraction * n_pixels + 1e-9))


def corrupt(d: DepthMap, g: GradientMap, noise: NoiseSpec) -> tuple[DepthMap, GradientMap]:
    """Add Gaussian noise to depth and gradients and punch holes in the depth mask.

    Exactly ``floor(hole_fraction * H * W)`` distinct pixels are made invalid.
    Noise that would push a linear depth to <= 0 also invalidates that pixel.
    """
    depth_ss, grad_ss, hole_ss = np.random.SeedSequence(noise.seed).spawn(3)
    h, w = d.shape
    values = d.values.copy()
    mask = d.mask.copy()
    if noise.depth_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(depth_ss))
        values = values + noise.depth_sigma * rng.standard_normal((h, w))
        if d.scale is Scale.LINEAR:
            mask &= values > 0
    gx, gy = g.gx, g.gy
    if noise.gradient_sigma > 0:
        rng = np.random.Generator(np.random.PCG64(grad_ss))
        gx = gx + noise.gradient_sigma * rng.standard_normal((h, w))
        gy = gy + noise.gradient_sigma * rng.standard_normal((h, w))
    k = hole_count(noise.hole_fraction, h * w)
    if k:
        rng = np.random.Generator(np.random.PCG64(hole_ss))
        holes = rng.choice(h * w, size=k, replace=False)
        mask.reshape(-1)[holes] = False
    return DepthMap(values, mask, d.scale), GradientMap(gx, gy, g.mask, g.scale)
