"""Raster containers and pixel kernels shared by every stage.

Images are plain 2D numpy arrays indexed ``[y, x]`` (row-major, height first).
Intensity images hold floats in [0, 1]; response images hold unbounded
floats; label maps hold non-negative integers.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path

import numpy as np

VFR_MAGIC = b"VFR1"
VFR_F64 = 0
VFR_U32 = 1


def as_raster(img) -> np.ndarray:
    arr = np.asarray(img)
    if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"expected a non-empty 2D raster, got shape {arr.shape}")
    return arr


# -- blur ---------------------------------------------------------------------

def gaussian_kernel(sigma: float) -> np.ndarray:
    """Normalized 1D Gaussian truncated at ceil(3 sigma)."""
    if sigma < 0:
        raise ValueError("sigma must be >= 0")
    if sigma == 0:
        return np.ones(1)
    radius = int(math.ceil(3.0 * sigma))
    t = np.arange(-radius, radius + 1, dtype=float)
    k = np.exp(-0.5 * (t / sigma) ** 2)
    return k / k.sum()


def _convolve_rows(arr: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    r = len(kernel) // 2
    padded = np.pad(arr, ((0, 0), (r, r)), mode="edge")
    out = np.zeros_like(arr, dtype=float)
    w = arr.shape[1]
    for i, kv in enumerate(kernel):
        out += kv * padded[:, i:i + w]
    return out


def gaussian_blur(img, sigma: float) -> np.ndarray:
    """Separable Gaussian blur with edge-clamped borders."""
    arr = as_raster(img).astype(float)
    if sigma == 0:
        return arr.copy()
    k = gaussian_kernel(sigma)
    tmp = _convolve_rows(arr, k)
    return _convolve_rows(tmp.T, k).T


# -- integral images ----------------------------------------------------------

class IntegralImage:
    """(h+1) x (w+1) cumulative sum table with a zero first row/column."""

    def __init__(self, img):
        arr = as_raster(img)
        self.height, self.width = arr.shape
        table = np.zeros((self.height + 1, self.width + 1), dtype=np.result_type(arr.dtype, np.float64))
        np.cumsum(np.cumsum(arr, axis=0), axis=1, out=table[1:, 1:])
        self.table = table

    def rect_sum(self, x0: int, y0: int, x1: int, y1: int) -> float:
        """Sum over the half-open rectangle [x0, x1) x [y0, y1)."""
        if not (0 <= x0 <= x1 <= self.width and 0 <= y0 <= y1 <= self.height):
            raise IndexError(
                f"rectangle ({x0},{y0})-({x1},{y1}) outside {self.width}x{self.height} image")
        t = self.table
        return t[y1, x1] - t[y0, x1] - t[y1, x0] + t[y0, x0]


def rect_sum(ii: IntegralImage, x0: int, y0: int, x1: int, y1: int) -> float:
    return ii.rect_sum(x0, y0, x1, y1)


# -- line rasterization -------------------------------------------------------

def rasterize_segment(p0, p1) -> list[tuple[int, int]]:
    """Pixels visited by a DDA walk from p0 to p1, both endpoints included.

    Endpoints are put in a canonical order first so that the result does not
    depend on the direction of the walk. Rounding is half-up.
    """
    (x0, y0), (x1, y1) = sorted([(float(p0[0]), float(p0[1])), (float(p1[0]), float(p1[1]))])
    dx, dy = x1 - x0, y1 - y0
    n = int(math.ceil(max(abs(dx), abs(dy))))
    if n == 0:
        return [(math.floor(x0 + 0.5), math.floor(y0 + 0.5))]
    t = np.arange(n + 1) / n
    xs = np.floor(x0 + t * dx + 0.5).astype(int)
    ys = np.floor(y0 + t * dy + 0.5).astype(int)
    out = []
    for px, py in zip(xs.tolist(), ys.tolist()):
        if not out or out[-1] != (px, py):
            out.append((px, py))
    return out


# -- file formats -------------------------------------------------------------

def _read_pnm_header(data: bytes, magic: bytes) -> tuple[int, int, int, int]:
    if data[:2] != magic:
        raise ValueError(f"not a {magic.decode()} file")
    fields = []
    pos = 2
    while len(fields) < 3:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise ValueError("truncated header")
        fields.append(int(data[start:pos]))
    # exactly one whitespace byte separates the header from the raster
    return fields[0], fields[1], fields[2], pos + 1


def read_pgm(path) -> np.ndarray:
    """Read a binary P5 PGM (8 or 16 bit) as floats in [0, 1]."""
    data = Path(path).read_bytes()
    w, h, maxval, offset = _read_pnm_header(data, b"P5")
    dtype = np.dtype(">u2") if maxval > 255 else np.dtype(np.uint8)
    count = w * h
    if len(data) < offset + count * dtype.itemsize:
        raise ValueError(f"{path}: truncated pixel data")
    pix = np.frombuffer(data, dtype=dtype, count=count, offset=offset)
    return pix.reshape(h, w).astype(float) / maxval


def write_pgm(path, img, bits: int = 8) -> None:
    """Write intensities in [0, 1] as a binary P5 PGM. Values are clipped."""
    arr = as_raster(img)
    if bits not in (8, 16):
        raise ValueError("bits must be 8 or 16")
    maxval = 255 if bits == 8 else 65535
    q = np.floor(np.clip(arr, 0.0, 1.0) * maxval + 0.5)
    pix = q.astype(np.uint8) if bits == 8 else q.astype(">u2")
    h, w = arr.shape
    Path(path).write_bytes(f"P5\n{w} {h}\n{maxval}\n".encode() + pix.tobytes())


def write_ppm(path, rgb) -> None:
    """Write an (h, w, 3) float image in [0, 1] as an 8-bit P6 PPM."""
    arr = np.asarray(rgb)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected (h, w, 3) array, got {arr.shape}")
    pix = np.floor(np.clip(arr, 0.0, 1.0) * 255 + 0.5).astype(np.uint8)
    h, w = arr.shape[:2]
    Path(path).write_bytes(f"P6\n{w} {h}\n255\n".encode() + pix.tobytes())


def read_ppm(path) -> np.ndarray:
    data = Path(path).read_bytes()
    w, h, maxval, offset = _read_pnm_header(data, b"P6")
    if maxval > 255:
        raise ValueError("16-bit PPM not supported")
    pix = np.frombuffer(data, dtype=np.uint8, count=w * h * 3, offset=offset)
    return pix.reshape(h, w, 3).astype(float) / maxval


def write_raster(path, img) -> None:
    """Persist a response (f64) or label (u32) raster in the VFR1 format."""
    arr = as_raster(img)
    if np.issubdtype(arr.dtype, np.integer) or arr.dtype == bool:
        if arr.size and (arr.min() < 0 or arr.max() > 0xFFFFFFFF):
            raise ValueError("label values must fit in u32")
        kind, body = VFR_U32, arr.astype("<u4")
    else:
        kind, body = VFR_F64, arr.astype("<f8")
    h, w = arr.shape
    Path(path).write_bytes(VFR_MAGIC + struct.pack("<III", w, h, kind) + body.tobytes())


def read_raster(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if data[:4] != VFR_MAGIC:
        raise ValueError(f"{path}: bad magic")
    w, h, kind = struct.unpack_from("<III", data, 4)
    if kind == VFR_F64:
        dtype = np.dtype("<f8")
    elif kind == VFR_U32:
        dtype = np.dtype("<u4")
    else:
        raise ValueError(f"{path}: unknown element kind {kind}")
    if len(data) != 16 + w * h * dtype.itemsize:
        raise ValueError(f"{path}: size does not match header")
    arr = np.frombuffer(data, dtype=dtype, offset=16).reshape(h, w)
    return arr.astype(np.float64 if kind == VFR_F64 else np.int64)
