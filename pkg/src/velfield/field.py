"""Per-pixel velocity histograms built from tracklet segments.

Every pixel on a tracklet segment receives a small normalized Gaussian blob
centred on the segment's velocity in a 2D (vx, vy) histogram. Histograms are
stored sparsely as (pixel, bin) -> mass entries; deposits are buffered and
summed on demand, which makes deposition order-independent and lets partial
fields be merged.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .raster import as_raster, rasterize_segment

VFF_MAGIC = b"VFF1"
VELOCITY_RANGE = 30.0   # px/frame, covers the displacement gate
BIN_WIDTH = 1.0
BLOB_SIGMA = 1.0        # in bins


class VelocityField:
    """Sparse per-pixel 2D histograms over (vx, vy) in px/frame.

    Bin (iy, ix) is centred at ((ix - half) * bin_width, (iy - half) * bin_width)
    where half = round(vmax / bin_width).
    """

    def __init__(self, shape, vmax: float = VELOCITY_RANGE, bin_width: float = BIN_WIDTH,
                 blob_sigma: float = BLOB_SIGMA):
        h, w = (int(v) for v in shape)
        if h <= 0 or w <= 0:
            raise ValueError("field dimensions must be positive")
        if not (vmax > 0 and bin_width > 0 and blob_sigma >= 0):
            raise ValueError("invalid histogram geometry")
        self.shape = (h, w)
        self.vmax = float(vmax)
        self.bin_width = float(bin_width)
        self.blob_sigma = float(blob_sigma)
        self.half = int(round(vmax / bin_width))
        self.n_bins = 2 * self.half + 1
        self._keys = [np.zeros(0, dtype=np.int64)]
        self._mass = [np.zeros(0)]

    # -- construction ---------------------------------------------------------

    def blob(self, v) -> tuple[np.ndarray, np.ndarray]:
        """Bin indices (flattened iy * n_bins + ix) and weights summing to 1 for velocity v."""
        vx, vy = float(v[0]), float(v[1])
        if not (abs(vx) <= self.vmax and abs(vy) <= self.vmax):
            raise ValueError(f"velocity ({vx}, {vy}) outside histogram range +-{self.vmax}")
        cx = vx / self.bin_width + self.half
        cy = vy / self.bin_width + self.half
        ix, wx = self._axis_weights(cx)
        iy, wy = self._axis_weights(cy)
        weights = np.outer(wy, wx)
        weights /= weights.sum()
        return (iy[:, None] * self.n_bins + ix[None, :]).ravel(), weights.ravel()

    def _axis_weights(self, c: float) -> tuple[np.ndarray, np.ndarray]:
        nearest = min(max(int(math.floor(c + 0.5)), 0), self.n_bins - 1)
        if self.blob_sigma == 0:
            return np.array([nearest]), np.ones(1)
        r = 3.0 * self.blob_sigma
        lo = max(int(math.ceil(c - r)), 0)
        hi = min(int(math.floor(c + r)), self.n_bins - 1)
        idx = np.arange(lo, hi + 1)
        if idx.size == 0:
            idx = np.array([nearest])
        return idx, np.exp(-0.5 * ((idx - c) / self.blob_sigma) ** 2)

    def deposit_segment(self, p0, p1, v) -> None:
        bins, weights = self.blob(v)
        h, w = self.shape
        pix = np.array(rasterize_segment(p0, p1), dtype=np.int64).reshape(-1, 2)
        inside = (pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)
        pid = pix[inside, 1] * w + pix[inside, 0]
        if pid.size == 0:
            return
        nb2 = self.n_bins * self.n_bins
        self._keys.append((pid[:, None] * nb2 + bins[None, :]).ravel())
        self._mass.append(np.broadcast_to(weights, (pid.size, weights.size)).ravel().copy())

    def deposit(self, tracklet) -> "VelocityField":
        for p0, p1, v in tracklet.segments():
            self.deposit_segment(p0, p1, v)
        return self

    def deposit_many(self, tracklets) -> "VelocityField":
        for t in tracklets:
            self.deposit(t)
        return self

    def merge(self, other: "VelocityField") -> "VelocityField":
        if (self.shape, self.vmax, self.bin_width) != (other.shape, other.vmax, other.bin_width):
            raise ValueError("cannot merge fields with different geometry")
        keys, mass = other.entries()
        self._keys.append(keys)
        self._mass.append(mass)
        return self

    def empty_like(self) -> "VelocityField":
        return VelocityField(self.shape, self.vmax, self.bin_width, self.blob_sigma)

    # -- queries --------------------------------------------------------------

    def entries(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted unique (pixel * n_bins^2 + bin) keys and their summed masses."""
        if len(self._keys) > 1:
            keys = np.concatenate(self._keys)
            mass = np.concatenate(self._mass)
            uniq, inv = np.unique(keys, return_inverse=True)
            self._keys = [uniq]
            self._mass = [np.bincount(inv, weights=mass, minlength=uniq.size)]
        return self._keys[0], self._mass[0]

    def pixel_of(self, keys):
        return np.divmod(keys // (self.n_bins * self.n_bins), self.shape[1])  # (y, x)

    def bin_velocity(self, bins) -> tuple[np.ndarray, np.ndarray]:
        iy, ix = np.divmod(np.asarray(bins), self.n_bins)
        return (ix - self.half) * self.bin_width, (iy - self.half) * self.bin_width

    def histogram(self, x: int, y: int) -> np.ndarray:
        """Dense (n_bins, n_bins) histogram indexed [iy, ix]; zeros when untouched."""
        keys, mass = self.entries()
        nb2 = self.n_bins * self.n_bins
        pid = y * self.shape[1] + x
        lo, hi = np.searchsorted(keys, [pid * nb2, (pid + 1) * nb2])
        hist = np.zeros(nb2)
        hist[keys[lo:hi] - pid * nb2] = mass[lo:hi]
        return hist.reshape(self.n_bins, self.n_bins)

    def mass_map(self) -> np.ndarray:
        keys, mass = self.entries()
        h, w = self.shape
        pid = keys // (self.n_bins * self.n_bins)
        return np.bincount(pid, weights=mass, minlength=h * w).reshape(h, w)

    @property
    def total_mass(self) -> float:
        return float(self.entries()[1].sum())

    def touched(self) -> int:
        keys, _ = self.entries()
        return int(np.unique(keys // (self.n_bins * self.n_bins)).size)


def segment_counts(tracklets, shape) -> np.ndarray:
    """Number of tracklet segments whose rasterization covers each pixel."""
    h, w = shape
    pix = [np.array(rasterize_segment(p0, p1), dtype=np.int64).reshape(-1, 2)
           for t in tracklets for p0, p1, _ in t.segments()]
    if not pix:
        return np.zeros((h, w), dtype=np.int64)
    pix = np.concatenate(pix)
    pix = pix[(pix[:, 0] >= 0) & (pix[:, 0] < w) & (pix[:, 1] >= 0) & (pix[:, 1] < h)]
    return np.bincount(pix[:, 1] * w + pix[:, 0], minlength=h * w).reshape(h, w)


# -- modes --------------------------------------------------------------------

@dataclass
class ModeMap:
    speed: np.ndarray       # px/frame, NaN where the histogram is empty
    direction: np.ndarray   # radians in [0, 2 pi), NaN where empty or speed is zero
    vx: np.ndarray
    vy: np.ndarray

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.speed)


def _direction(vx, vy):
    return np.mod(np.arctan2(vy, vx), 2 * np.pi)


def mode(field: VelocityField, x: int, y: int):
    """(speed, direction) of the pixel's highest bin, or None for an empty histogram.

    Ties go to the lowest (vy, vx) bin. Direction is None at zero speed.
    """
    hist = field.histogram(x, y)
    if not np.any(hist > 0):
        return None
    b = int(np.argmax(hist))
    vx, vy = field.bin_velocity(b)
    speed = float(math.hypot(vx, vy))
    return speed, (float(_direction(vx, vy)) if speed > 0 else None)


def mode_maps(field: VelocityField) -> ModeMap:
    keys, mass = field.entries()
    h, w = field.shape
    nb2 = field.n_bins * field.n_bins
    speed = np.full((h, w), np.nan)
    direction = np.full((h, w), np.nan)
    vxm = np.full((h, w), np.nan)
    vym = np.full((h, w), np.nan)
    live = mass > 0
    keys, mass = keys[live], mass[live]
    if keys.size:
        pid, bins = np.divmod(keys, nb2)
        # per pixel: highest mass first, then lowest bin
        order = np.lexsort((bins, -mass, pid))
        first = order[np.r_[True, pid[order][1:] != pid[order][:-1]]]
        vx, vy = field.bin_velocity(bins[first])
        y, x = np.divmod(pid[first], w)
        s = np.hypot(vx, vy)
        speed[y, x] = s
        vxm[y, x], vym[y, x] = vx, vy
        direction[y, x] = np.where(s > 0, _direction(vx, vy), np.nan)
    return ModeMap(speed, direction, vxm, vym)


# -- rendering ----------------------------------------------------------------

def hsv_to_rgb(h, s, v) -> np.ndarray:
    """Vectorized HSV -> RGB with hue in [0, 1)."""
    h = np.mod(np.asarray(h, dtype=float), 1.0)
    s = np.broadcast_to(np.asarray(s, dtype=float), h.shape)
    v = np.broadcast_to(np.asarray(v, dtype=float), h.shape)
    i = np.floor(h * 6).astype(int) % 6
    f = h * 6 - np.floor(h * 6)
    p, q, t = v * (1 - s), v * (1 - f * s), v * (1 - (1 - f) * s)
    choices = [(v, t, p), (q, v, p), (p, v, t), (p, q, v), (t, p, v), (v, p, q)]
    rgb = np.zeros(h.shape + (3,))
    for k, (r, g, b) in enumerate(choices):
        m = i == k
        rgb[m] = np.stack([r[m], g[m], b[m]], axis=-1)
    return rgb


def speed_ramp(speed, scale: float) -> np.ndarray:
    """Speed colour ramp: hue runs from 240 deg (blue, stopped) to 0 deg (red, >= scale)."""
    frac = np.clip(np.asarray(speed, dtype=float) / scale, 0.0, 1.0)
    return hsv_to_rgb((1.0 - frac) * (240.0 / 360.0), 1.0, 1.0)


def direction_wheel(direction) -> np.ndarray:
    """Direction colour wheel: hue equals the angle (0 = +x, increasing towards +y)."""
    return hsv_to_rgb(np.asarray(direction, dtype=float) / (2 * np.pi), 1.0, 1.0)


@dataclass
class RenderedMaps:
    speed: np.ndarray           # gray, modal speed / scale over the base image
    direction: np.ndarray       # gray, direction / 2 pi over the base image
    speed_rgb: np.ndarray
    direction_rgb: np.ndarray
    modes: ModeMap


def render_maps(field: VelocityField, base_image, alpha: float = 1.0, speed_scale: float | None = None) -> RenderedMaps:
    """Modal speed and direction maps drawn over the base image.

    Pixels with empty histograms show the base image; zero-speed pixels get a
    speed colour but no direction colour.
    """
    base = as_raster(base_image).astype(float)
    if base.shape != field.shape:
        raise ValueError(f"base image {base.shape} does not match field {field.shape}")
    if not 0 <= alpha <= 1:
        raise ValueError("alpha must be in [0, 1]")
    scale = field.vmax if speed_scale is None else float(speed_scale)
    modes = mode_maps(field)
    has_speed = modes.present
    has_dir = ~np.isnan(modes.direction)
    gray = np.repeat(base[..., None], 3, axis=2)

    speed_rgb = gray.copy()
    col = speed_ramp(np.nan_to_num(modes.speed), scale)
    speed_rgb[has_speed] = alpha * col[has_speed] + (1 - alpha) * gray[has_speed]
    direction_rgb = gray.copy()
    col = direction_wheel(np.nan_to_num(modes.direction))
    direction_rgb[has_dir] = alpha * col[has_dir] + (1 - alpha) * gray[has_dir]

    speed_gray = base.copy()
    speed_gray[has_speed] = np.clip(modes.speed[has_speed] / scale, 0, 1)
    dir_gray = base.copy()
    dir_gray[has_dir] = modes.direction[has_dir] / (2 * np.pi)
    return RenderedMaps(speed_gray, dir_gray, speed_rgb, direction_rgb, modes)


# -- persistence --------------------------------------------------------------

_HEADER = struct.Struct("<4sIIddI")
_PIXEL = np.dtype([("x", "<u4"), ("y", "<u4"), ("count", "<u4")])
_ENTRY = np.dtype([("bin", "<u4"), ("mass", "<f8")])


def save_field(path, field: VelocityField) -> None:
    """VFF1: header (magic, width, height, vmax, bin width, pixel count), then per
    pixel (x, y, nonzero-bin count) followed by that many (bin, mass) pairs."""
    keys, mass = field.entries()
    live = mass != 0
    keys, mass = keys[live], mass[live]
    h, w = field.shape
    nb2 = field.n_bins * field.n_bins
    pid, bins = np.divmod(keys, nb2)
    uniq, starts, counts = np.unique(pid, return_index=True, return_counts=True)
    chunks = [_HEADER.pack(VFF_MAGIC, w, h, field.vmax, field.bin_width, uniq.size)]
    for p, s, c in zip(uniq.tolist(), starts.tolist(), counts.tolist()):
        y, x = divmod(p, w)
        head = np.array([(x, y, c)], dtype=_PIXEL)
        ent = np.empty(c, dtype=_ENTRY)
        ent["bin"] = bins[s:s + c]
        ent["mass"] = mass[s:s + c]
        chunks.append(head.tobytes() + ent.tobytes())
    Path(path).write_bytes(b"".join(chunks))


def load_field(path, blob_sigma: float = BLOB_SIGMA) -> VelocityField:
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size or data[:4] != VFF_MAGIC:
        raise ValueError(f"{path}: not a VFF1 field file")
    _, w, h, vmax, bw, n_pix = _HEADER.unpack_from(data, 0)
    field = VelocityField((h, w), vmax, bw, blob_sigma)
    nb2 = field.n_bins * field.n_bins
    pos = _HEADER.size
    keys, masses = [], []
    for _ in range(n_pix):
        if pos + _PIXEL.itemsize > len(data):
            raise ValueError(f"{path}: truncated")
        head = np.frombuffer(data, dtype=_PIXEL, count=1, offset=pos)[0]
        pos += _PIXEL.itemsize
        c = int(head["count"])
        if pos + c * _ENTRY.itemsize > len(data):
            raise ValueError(f"{path}: truncated")
        ent = np.frombuffer(data, dtype=_ENTRY, count=c, offset=pos)
        pos += c * _ENTRY.itemsize
        pid = int(head["y"]) * w + int(head["x"])
        keys.append(pid * nb2 + ent["bin"].astype(np.int64))
        masses.append(ent["mass"].astype(float))
    if pos != len(data):
        raise ValueError(f"{path}: trailing bytes")
    if keys:
        # routed through the pending buffers so entries() re-validates ordering
        field._keys.append(np.concatenate(keys))
        field._mass.append(np.concatenate(masses))
    return field
