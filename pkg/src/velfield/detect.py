"""Car detection from a blurred classifier response.

Local maxima above the growth threshold seed a synchronous region-growing
segmentation; regions that are large enough become detections located at
their pixel mean and oriented along their principal axis.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .raster import as_raster, gaussian_blur

BLUR_SIGMA = 3.0
MIN_REGION_PIXELS = 10
GROWTH_THRESHOLD = 0.0
ISOTROPY_TOL = 1e-9


@dataclass(frozen=True)
class Detection:
    frame: int
    x: float
    y: float
    theta: float            # principal axis, radians in [0, pi)
    pixels: int
    mean_response: float
    degenerate: bool = False

    @property
    def centre(self) -> np.ndarray:
        return np.array([self.x, self.y])


def find_local_maxima(C, threshold: float = GROWTH_THRESHOLD) -> list[tuple[int, int]]:
    """Pixels strictly greater than every existing 8-neighbour and above threshold.

    Returned as (x, y) in raster order.
    """
    C = as_raster(C).astype(float)
    h, w = C.shape
    padded = np.pad(C, 1, mode="constant", constant_values=-np.inf)
    is_max = C > threshold
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            is_max &= C > padded[1 + dy:1 + dy + h, 1 + dx:1 + dx + w]
    ys, xs = np.nonzero(is_max)
    return list(zip(xs.tolist(), ys.tolist()))


def region_grow(C, seeds, threshold: float = GROWTH_THRESHOLD) -> np.ndarray:
    """Grow labelled regions from seeds over pixels with C > threshold.

    Seed k (0-based) gets label k + 1. Every iteration spreads the labels of
    the previous iteration's occupied pixels to free 4-neighbours. When several
    sources reach the same pixel in one iteration, the source earliest in
    raster order wins; for a target pixel that is the first occupied neighbour
    among (above, left, right, below).
    """
    C = as_raster(C).astype(float)
    h, w = C.shape
    S = np.zeros((h, w), dtype=np.int64)
    for k, (x, y) in enumerate(seeds):
        if not (0 <= x < w and 0 <= y < h):
            raise ValueError(f"seed {(x, y)} outside the image")
        if not C[y, x] > threshold:
            raise ValueError(f"seed {(x, y)} has response {C[y, x]} <= threshold {threshold}")
        if S[y, x]:
            raise ValueError(f"duplicate seed {(x, y)}")
        S[y, x] = k + 1
    grow = C > threshold
    while True:
        P = np.pad(S, 1)
        up, left = P[:-2, 1:-1], P[1:-1, :-2]
        right, down = P[1:-1, 2:], P[2:, 1:-1]
        claim = np.where(up > 0, up, np.where(left > 0, left, np.where(right > 0, right, down)))
        new = (S == 0) & grow & (claim > 0)
        if not new.any():
            return S
        S = np.where(new, claim, S)


def principal_axis(cxx: float, cyy: float, cxy: float) -> tuple[float, bool]:
    """Angle in [0, pi) of the largest-covariance eigenvector, plus an isotropy flag."""
    evals, evecs = np.linalg.eigh(np.array([[cxx, cxy], [cxy, cyy]]))
    if evals[1] - evals[0] < ISOTROPY_TOL:
        return 0.0, True
    vx, vy = evecs[:, 1]
    return math.atan2(vy, vx) % math.pi, False


def extract_detections(S, frame: int = 0, min_pixels: int = MIN_REGION_PIXELS, C=None) -> list[Detection]:
    """Turn a label map into detections, dropping regions under ``min_pixels``."""
    S = as_raster(S)
    labels = S.ravel()
    n = int(labels.max()) + 1 if labels.size else 1
    ys, xs = np.divmod(np.arange(labels.size), S.shape[1])
    count = np.bincount(labels, minlength=n)
    moments = [np.bincount(labels, weights=wt, minlength=n) for wt in (xs, ys, xs * xs, ys * ys, xs * ys)]
    resp = np.bincount(labels, weights=np.asarray(C, dtype=float).ravel(), minlength=n) if C is not None else np.zeros(n)
    out = []
    for lab in np.nonzero(count >= max(min_pixels, 1))[0].tolist():
        if lab == 0:
            continue
        cnt = int(count[lab])
        mx, my, mxx, myy, mxy = (m[lab] / cnt for m in moments)
        theta, degenerate = principal_axis(mxx - mx * mx, myy - my * my, mxy - mx * my)
        out.append(Detection(frame, float(mx), float(my), theta, cnt, float(resp[lab] / cnt), degenerate))
    return out


def detect_cars(response, frame: int = 0, blur_sigma: float = BLUR_SIGMA,
                threshold: float = GROWTH_THRESHOLD, min_pixels: int = MIN_REGION_PIXELS):
    """Blur a raw response image and run maxima, growing and moment extraction.

    Returns (detections, blurred response, label map).
    """
    C = gaussian_blur(response, blur_sigma)
    seeds = find_local_maxima(C, threshold)
    S = region_grow(C, seeds, threshold)
    return extract_detections(S, frame, min_pixels, C), C, S


def write_detections(path, detections) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame", "x", "y", "theta", "pixels", "mean_response"])
        for d in detections:
            out.writerow([d.frame, repr(d.x), repr(d.y), repr(d.theta), d.pixels, repr(d.mean_response)])


def read_detections(path) -> list[Detection]:
    with open(path, newline="") as fh:
        return [Detection(int(r["frame"]), float(r["x"]), float(r["y"]), float(r["theta"]),
                          int(r["pixels"]), float(r["mean_response"]))
                for r in csv.DictReader(fh)]
