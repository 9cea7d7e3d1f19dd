"""Raster files: the GFR1 container and grayscale PFM interop.

GFR1 layout (all integers little-endian)::

    offset size  field
    0      4     magic  b"GFR1"
    4      1     kind   0 depth, 1 gradient-x, 2 gradient-y, 3 mask, 4 rgb
    5      1     scale  0 linear, 1 log
    6      2     reserved, zero
    8      4     height (uint32)
    12     4     width  (uint32)
    16     4     CRC-32 of the payload (uint32)
    20     ...   payload, row-major

Depth and gradient payloads are float32 with NaN at invalid pixels.  Mask
payloads are one byte per pixel (0/1), RGB payloads three bytes per pixel
(value * 255, rounded).  Every write goes to a temporary file that is then
renamed over the destination.
"""

from __future__ import annotations

import enum
import os
import struct
import tempfile
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from depthfuse.core import DepthMap, GradientMap, RgbImage, Scale
from depthfuse.errors import BadMagic, ChecksumMismatch, Malformed, Truncated, WrongScale

MAGIC = b"GFR1"
_HEADER = struct.Struct("<4sBBHIII")
HEADER_SIZE = _HEADER.size  # 20


class RasterKind(enum.IntEnum):
    DEPTH = 0
    GRADIENT_X = 1
    GRADIENT_Y = 2
    MASK = 3
    RGB = 4


_SCALE_CODES = {Scale.LINEAR: 0, Scale.LOG: 1}
_CODE_SCALES = {v: k for k, v in _SCALE_CODES.items()}
_FLOAT_KINDS = (RasterKind.DEPTH, RasterKind.GRADIENT_X, RasterKind.GRADIENT_Y)


@dataclass(frozen=True, eq=False)
class Raster:
    kind: RasterKind
    scale: Scale
    data: np.ndarray  # float32 (H, W), bool (H, W) or uint8 (H, W, 3)


def atomic_write(path, payload: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _payload_size(kind: RasterKind, h: int, w: int) -> int:
    if kind in _FLOAT_KINDS:
        return 4 * h * w
    if kind is RasterKind.MASK:
        return h * w
    return 3 * h * w


def encode_raster(kind: RasterKind, data: np.ndarray, scale: Scale = Scale.LINEAR) -> bytes:
    kind = RasterKind(kind)
    data = np.asarray(data)
    h, w = data.shape[:2]
    if h == 0 or w == 0:
        raise ValueError("raster dimensions must be positive")
    if kind in _FLOAT_KINDS:
        payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    elif kind is RasterKind.MASK:
        payload = np.ascontiguousarray(data, dtype=bool).astype(np.uint8).tobytes()
    else:
        if data.shape != (h, w, 3):
            raise ValueError("RGB raster data must be (H, W, 3)")
        payload = np.ascontiguousarray(data, dtype=np.uint8).tobytes()
    header = _HEADER.pack(MAGIC, int(kind), _SCALE_CODES[Scale(scale)], 0, h, w,
                          zlib.crc32(payload))
    return header + payload


def decode_raster(blob: bytes, name: str = "<bytes>") -> Raster:
    if len(blob) < HEADER_SIZE:
        raise Truncated(f"{name}: file shorter than the {HEADER_SIZE}-byte header")
    magic, kind, scale, _, h, w, crc = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise BadMagic(f"{name}: bad magic {magic!r}")
    try:
        kind = RasterKind(kind)
        scale = _CODE_SCALES[scale]
    except (ValueError, KeyError):
        raise Malformed(f"{name}: unknown kind {kind} or scale {scale}") from None
    if h == 0 or w == 0:
        raise Malformed(f"{name}: zero dimension {h}x{w}")
    size = _payload_size(kind, h, w)
    payload = blob[HEADER_SIZE:]
    if len(payload) < size:
        raise Truncated(f"{name}: payload has {len(payload)} bytes, expected {size}")
    if len(payload) > size:
        raise Malformed(f"{name}: {len(payload) - size} trailing bytes after payload")
    if zlib.crc32(payload) != crc:
        raise ChecksumMismatch(f"{name}: payload checksum mismatch")
    if kind in _FLOAT_KINDS:
        data = np.frombuffer(payload, dtype="<f4").reshape(h, w).astype(np.float32)
    elif kind is RasterKind.MASK:
        data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w) != 0
    else:
        data = np.frombuffer(payload, dtype=np.uint8).reshape(h, w, 3).copy()
    return Raster(kind, scale, data)


def write_raster(path, kind: RasterKind, data: np.ndarray, scale: Scale = Scale.LINEAR) -> None:
    atomic_write(path, encode_raster(kind, data, scale))


def read_raster(path) -> Raster:
    return decode_raster(Path(path).read_bytes(), str(path))


def _with_nans(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    return np.where(mask, values, np.nan).astype(np.float32)


def _expect(r: Raster, kind: RasterKind, path) -> None:
    if r.kind is not kind:
        raise Malformed(f"{path}: expected a {kind.name.lower()} raster, found {r.kind.name.lower()}")


def write_depth(path, d: DepthMap) -> None:
    write_raster(path, RasterKind.DEPTH, _with_nans(d.values, d.mask), d.scale)


def read_depth(path) -> DepthMap:
    r = read_raster(path)
    _expect(r, RasterKind.DEPTH, path)
    return DepthMap(r.data, np.isfinite(r.data), r.scale)


def write_gradients(gx_path, gy_path, g: GradientMap) -> None:
    write_raster(gx_path, RasterKind.GRADIENT_X, _with_nans(g.gx, g.mask), g.scale)
    write_raster(gy_path, RasterKind.GRADIENT_Y, _with_nans(g.gy, g.mask), g.scale)


def read_gradients(gx_path, gy_path) -> GradientMap:
    rx, ry = read_raster(gx_path), read_raster(gy_path)
    _expect(rx, RasterKind.GRADIENT_X, gx_path)
    _expect(ry, RasterKind.GRADIENT_Y, gy_path)
    if rx.data.shape != ry.data.shape:
        raise Malformed(f"{gx_path} and {gy_path} have different shapes")
    if rx.scale is not ry.scale:
        raise Malformed(f"{gx_path} and {gy_path} have different scales")
    mask = np.isfinite(rx.data) & np.isfinite(ry.data)
    return GradientMap(rx.data, ry.data, mask, rx.scale)


def write_mask(path, mask: np.ndarray) -> None:
    write_raster(path, RasterKind.MASK, mask)


def read_mask(path) -> np.ndarray:
    r = read_raster(path)
    _expect(r, RasterKind.MASK, path)
    return r.data


def write_rgb(path, img: RgbImage) -> None:
    write_raster(path, RasterKind.RGB, np.rint(img.values * 255).astype(np.uint8))


def read_rgb(path) -> RgbImage:
    r = read_raster(path)
    _expect(r, RasterKind.RGB, path)
    return RgbImage(r.data / 255.0)


# -- PFM -----------------------------------------------------------------------

def export_pfm(path, d: DepthMap) -> None:
    """Little-endian grayscale PFM, bottom row first; invalid pixels written as NaN."""
    if d.scale is not Scale.LINEAR:
        raise WrongScale("PFM export expects linear depth")
    h, w = d.shape
    header = f"Pf\n{w} {h}\n-1.0\n".encode("ascii")
    data = np.flipud(_with_nans(d.values, d.mask)).astype("<f4")
    atomic_write(path, header + data.tobytes())


def _read_token(blob: bytes, pos: int) -> tuple[bytes, int]:
    while pos < len(blob) and blob[pos:pos + 1].isspace():
        pos += 1
    start = pos
    while pos < len(blob) and not blob[pos:pos + 1].isspace():
        pos += 1
    return blob[start:pos], pos


def import_pfm(path) -> DepthMap:
    """Read a grayscale PFM; NaN, infinite and non-positive samples become invalid."""
    blob = Path(path).read_bytes()
    tokens = []
    pos = 0
    for _ in range(4):
        tok, pos = _read_token(blob, pos)
        tokens.append(tok)
    pos += 1  # the single whitespace byte ending the header
    tag, w_tok, h_tok, scale_tok = tokens
    if tag != b"Pf":
        raise Malformed(f"{path}: not a grayscale PFM (tag {tag!r})")
    try:
        w, h = int(w_tok), int(h_tok)
        scale = float(scale_tok)
    except ValueError:
        raise Malformed(f"{path}: unreadable PFM header") from None
    if w <= 0 or h <= 0 or scale == 0:
        raise Malformed(f"{path}: invalid PFM header values")
    dtype = "<f4" if scale < 0 else ">f4"
    payload = blob[pos:]
    if len(payload) != 4 * w * h:
        raise Malformed(f"{path}: expected {4 * w * h} payload bytes, found {len(payload)}")
    data = np.flipud(np.frombuffer(payload, dtype=dtype).reshape(h, w)).astype(np.float64)
    with np.errstate(invalid="ignore"):
        mask = np.isfinite(data) & (data > 0)
    return DepthMap(np.where(mask, data, 0.0), mask, Scale.LINEAR)
