"""Pinhole backprojection of depth maps and ASCII PLY export."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Optional

import numpy as np

from depthfuse.core import CameraIntrinsics, DepthMap, RgbImage, Scale
from depthfuse.errors import ShapeMismatch, WrongScale
from depthfuse.raster_io import atomic_write


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray  # (N, 3) meters
    colors: Optional[np.ndarray] = None  # (N, 3) in [0, 1]

    def __len__(self) -> int:
        return len(self.points)


def backproject(d: DepthMap, intr: CameraIntrinsics,
                colors: Optional[RgbImage] = None) -> PointCloud:
    """Lift each valid pixel ``(u, v)`` with depth ``z`` to
    ``((u - cx) z / fx, (v - cy) z / fy, z)``, in row-major pixel order."""
    if d.scale is not Scale.LINEAR:
        raise WrongScale("backprojection needs linear depth")
    if colors is not None and colors.shape != d.shape:
        raise ShapeMismatch(f"colour image {colors.shape} != depth {d.shape}")
    v, u = np.nonzero(d.mask)
    z = d.values[v, u]
    pts = np.stack([(u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z], axis=1)
    rgb = None if colors is None else colors.values[v, u]
    return PointCloud(pts.reshape(-1, 3), rgb)


def project(points: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Inverse of :func:`backproject`: ``(N, 3)`` points to ``(N, 2)`` pixel ``(u, v)``."""
    points = np.asarray(points, dtype=np.float64)
    z = points[:, 2]
    return np.stack([intr.fx * points[:, 0] / z + intr.cx,
                     intr.fy * points[:, 1] / z + intr.cy], axis=1)


def ply_bytes(cloud: PointCloud) -> bytes:
    """ASCII PLY 1.0; coordinates as float32 printed with 9 significant digits."""
    header = ["ply", "format ascii 1.0", f"element vertex {len(cloud)}",
              "property float x", "property float y", "property float z"]
    if cloud.colors is not None:
        header += ["property uchar red", "property uchar green", "property uchar blue"]
    header.append("end_header")
    lines = header
    pts = cloud.points.astype(np.float32)
    if cloud.colors is None:
        lines += [f"{x:.9g} {y:.9g} {z:.9g}" for x, y, z in pts.tolist()]
    else:
        rgb = np.rint(np.clip(cloud.colors, 0.0, 1.0) * 255).astype(np.uint8)
        lines += [f"{x:.9g} {y:.9g} {z:.9g} {r} {g} {b}"
                  for (x, y, z), (r, g, b) in zip(pts.tolist(), rgb.tolist())]
    return ("\n".join(lines) + "\n").encode("ascii")


def write_ply(path: str | os.PathLike, cloud: PointCloud) -> None:
    atomic_write(path, ply_bytes(cloud))
