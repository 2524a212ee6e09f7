"""Three-frame tracklets from per-frame detections.

Candidate matches between consecutive frames must pass physical gates
(displacement, rotation, direction of motion). Remaining ambiguity is
resolved by mutual best SAD appearance match, and matches from (n, n+1)
and (n+1, n+2) are chained into tracklets that pass an acceleration bound.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .detect import Detection

PATCH_ACROSS = 8
PATCH_ALONG = 16


@dataclass(frozen=True)
class Gates:
    max_displacement: float = 30.0       # px/frame
    max_rotation: float = 30.0           # degrees per frame, on the folded axis
    max_direction_offset: float = 30.0   # degrees between motion and car axis
    low_speed_exemption: float = 5.0     # px/s; direction gate waived at or below
    max_acceleration: float = 4.0        # px/frame^2
    direction_axis: str = "first"        # "first", "second" or "mean"

    def __post_init__(self):
        for name in ("max_displacement", "max_rotation", "max_direction_offset",
                     "low_speed_exemption", "max_acceleration"):
            if not getattr(self, name) > 0:
                raise ValueError(f"gate {name} must be positive")
        if self.direction_axis not in ("first", "second", "mean"):
            raise ValueError(f"unknown direction_axis {self.direction_axis!r}")


@dataclass(frozen=True)
class Match:
    i: int
    j: int
    sad: float


@dataclass(frozen=True)
class Tracklet:
    frame: int
    points: tuple[tuple[float, float], tuple[float, float], tuple[float, float]]
    ids: tuple[int, int, int] | None = None   # detection indices in frames n, n+1, n+2

    @property
    def v1(self) -> np.ndarray:
        return np.subtract(self.points[1], self.points[0])

    @property
    def v2(self) -> np.ndarray:
        return np.subtract(self.points[2], self.points[1])

    @property
    def acceleration(self) -> float:
        return float(np.hypot(*(self.v2 - self.v1)))

    def segments(self):
        """The two (start, end, velocity) line segments."""
        return [(self.points[0], self.points[1], self.v1), (self.points[1], self.points[2], self.v2)]


def axis_difference(a, b):
    """Angle between two undirected axes, radians folded into [0, pi/2]."""
    d = np.mod(np.asarray(a) - np.asarray(b), math.pi)
    return np.minimum(d, math.pi - d)


def mean_axis(a, b):
    return np.mod(0.5 * np.arctan2(np.sin(2 * a) + np.sin(2 * b), np.cos(2 * a) + np.cos(2 * b)), math.pi)


def gate_pairs(A: list[Detection], B: list[Detection], gates: Gates = Gates(),
               frame_rate: float = 5.0) -> list[tuple[int, int]]:
    """All (i, j) with A[i] -> B[j] kinematically admissible."""
    if not A or not B:
        return []
    pa = np.array([[d.x, d.y] for d in A])
    pb = np.array([[d.x, d.y] for d in B])
    ta = np.array([d.theta for d in A])[:, None]
    tb = np.array([d.theta for d in B])[None, :]
    disp = pb[None, :, :] - pa[:, None, :]
    dist = np.hypot(disp[..., 0], disp[..., 1])
    ok = dist <= gates.max_displacement
    ok &= axis_difference(ta, tb) <= math.radians(gates.max_rotation)
    if gates.direction_axis == "first":
        axis = np.broadcast_to(ta, dist.shape)
    elif gates.direction_axis == "second":
        axis = np.broadcast_to(tb, dist.shape)
    else:
        axis = mean_axis(ta, tb)
    heading = np.arctan2(disp[..., 1], disp[..., 0])
    aligned = axis_difference(heading, axis) <= math.radians(gates.max_direction_offset)
    slow = dist * frame_rate <= gates.low_speed_exemption
    ok &= slow | aligned
    ii, jj = np.nonzero(ok)
    return list(zip(ii.tolist(), jj.tolist()))


def patch_grid(det: Detection, theta: float | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample coordinates of the 8 x 16 car-aligned patch (16 along the axis)."""
    t = det.theta if theta is None else theta
    v = np.arange(PATCH_ALONG) - (PATCH_ALONG - 1) / 2
    u = np.arange(PATCH_ACROSS) - (PATCH_ACROSS - 1) / 2
    vv, uu = np.meshgrid(v, u, indexing="ij")
    c, s = math.cos(t), math.sin(t)
    return det.x + vv * c - uu * s, det.y + vv * s + uu * c


def bilinear(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray | None:
    """Bilinear samples, or None if any sample falls outside the pixel centres."""
    h, w = img.shape
    if xs.min() < 0 or ys.min() < 0 or xs.max() > w - 1 or ys.max() > h - 1:
        return None
    x0 = np.minimum(np.floor(xs).astype(int), w - 2) if w > 1 else np.zeros(xs.shape, int)
    y0 = np.minimum(np.floor(ys).astype(int), h - 2) if h > 1 else np.zeros(ys.shape, int)
    fx, fy = xs - x0, ys - y0
    x1, y1 = np.minimum(x0 + 1, w - 1), np.minimum(y0 + 1, h - 1)
    return ((1 - fy) * ((1 - fx) * img[y0, x0] + fx * img[y0, x1])
            + fy * ((1 - fx) * img[y1, x0] + fx * img[y1, x1]))


def sad_score(img_a, img_b, det_a: Detection, det_b: Detection) -> float:
    """SAD between car-aligned patches; +inf if either patch leaves the image.

    The second patch is tried in both 180-degree alignments (orientation is
    only known mod pi) and the smaller score kept.
    """
    a = bilinear(np.asarray(img_a, dtype=float), *patch_grid(det_a))
    b = bilinear(np.asarray(img_b, dtype=float), *patch_grid(det_b))
    if a is None or b is None:
        return math.inf
    return float(min(np.abs(a - b).sum(), np.abs(a - b[::-1, ::-1]).sum()))


def score_matrix(img_a, img_b, A, B, admissible) -> np.ndarray:
    """SAD scores for admissible pairs, +inf elsewhere."""
    S = np.full((len(A), len(B)), np.inf)
    for i, j in admissible:
        S[i, j] = sad_score(img_a, img_b, A[i], B[j])
    return S


def symmetric_match(scores, admissible=None) -> list[Match]:
    """Keep (i, j) only when each is the other's lowest score (lowest index on ties).

    ``scores`` is an (n_a, n_b) array; pairs not in ``admissible`` (when given)
    and infinite scores never match.
    """
    S = np.array(scores, dtype=float, copy=True)
    if S.ndim != 2:
        raise ValueError("scores must be a 2D array")
    if admissible is not None:
        mask = np.zeros(S.shape, dtype=bool)
        for i, j in admissible:
            mask[i, j] = True
        S[~mask] = np.inf
    if S.size == 0:
        return []
    best_j = np.argmin(S, axis=1)
    best_i = np.argmin(S, axis=0)
    out = []
    for i, j in enumerate(best_j.tolist()):
        if np.isfinite(S[i, j]) and best_i[j] == i:
            out.append(Match(i, j, float(S[i, j])))
    return out


def chain_tracklets(m01: list[Match], m12: list[Match], d0: list[Detection], d1: list[Detection],
                    d2: list[Detection], gates: Gates = Gates(), frame: int | None = None) -> list[Tracklet]:
    """Join matches through their shared middle detection and apply the acceleration bound."""
    nxt = {m.i: m.j for m in m12}
    out = []
    for m in m01:
        k = nxt.get(m.j)
        if k is None:
            continue
        a, b, c = d0[m.i], d1[m.j], d2[k]
        t = Tracklet(a.frame if frame is None else frame, ((a.x, a.y), (b.x, b.y), (c.x, c.y)), (m.i, m.j, k))
        if t.acceleration <= gates.max_acceleration:
            out.append(t)
    return out


def match_frames(img_a, img_b, A, B, gates: Gates = Gates(), frame_rate: float = 5.0) -> list[Match]:
    adm = gate_pairs(A, B, gates, frame_rate)
    return symmetric_match(score_matrix(img_a, img_b, A, B, adm), adm)


def track_sequence(frames, detections, gates: Gates = Gates(), frame_rate: float = 5.0,
                   first_frame: int = 0) -> list[Tracklet]:
    """Tracklets for every window (n, n+1, n+2) of a frame sequence.

    ``detections[k]`` holds the detections of ``frames[k]``.
    """
    if len(frames) != len(detections):
        raise ValueError("need one detection list per frame")
    matches = [match_frames(frames[k], frames[k + 1], detections[k], detections[k + 1], gates, frame_rate)
               for k in range(len(frames) - 1)]
    out = []
    for k in range(len(frames) - 2):
        out += chain_tracklets(matches[k], matches[k + 1], detections[k], detections[k + 1],
                               detections[k + 2], gates, frame=first_frame + k)
    return out


def write_tracklets(path, tracklets) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame_n", "x0", "y0", "x1", "y1", "x2", "y2"])
        for t in tracklets:
            out.writerow([t.frame] + [repr(float(c)) for p in t.points for c in p])


def read_tracklets(path) -> list[Tracklet]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [Tracklet(int(r["frame_n"]), ((float(r["x0"]), float(r["y0"])), (float(r["x1"]), float(r["y1"])),
                                         (float(r["x2"]), float(r["y2"]))))
            for r in rows]
