"""Synthetic aerial traffic: lanes, vehicles, rendered frames and ground truth.

Vehicles travel at constant speed along lane polylines and are drawn as
bright 8x16 px rectangles over a smooth value-noise background.
Each frame is displaced by a small random global translation to imitate
residual registration jitter. Ground truth is kept in world (unjittered)
coordinates; :func:`truth_labels` returns the centres as they appear in the
rendered image.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

CAR_LENGTH = 16.0
CAR_WIDTH = 8.0
MAX_LANE_SPEED = 30.0
ONE_G = 1.74  # px/frame^2 at 0.23 m/px and 5 frames/s

BACKGROUND_LEVEL = 0.45
TEXTURE_CELL = 32
TEXTURE_AMPLITUDE = 0.05


@dataclass
class LaneSpec:
    points: list[tuple[float, float]]
    speed: float                 # px/frame
    width: float = 12.0          # px
    spawn_rate: float = 0.08     # vehicles/frame
    direction: int = 1           # +1 follows the polyline, -1 runs it backwards
    min_gap: float = 36.0        # minimum spawn headway along the lane, px

    def __post_init__(self):
        if len(self.points) < 2:
            raise ValueError("a lane needs at least two points")
        if not 0 < self.speed <= MAX_LANE_SPEED:
            raise ValueError(f"lane speed {self.speed} outside (0, {MAX_LANE_SPEED}] px/frame")
        if self.width < CAR_WIDTH:
            raise ValueError("lane narrower than a car")
        if self.direction not in (1, -1):
            raise ValueError("direction must be +1 or -1")
        if not 0 <= self.spawn_rate <= 1:
            raise ValueError("spawn_rate must be a probability per frame")


class LanePath:
    """Arc-length parametrized polyline, extended linearly past both ends."""

    def __init__(self, points, direction: int = 1):
        pts = np.asarray(points, dtype=float)
        if direction < 0:
            pts = pts[::-1]
        self.points = pts
        seg = np.diff(pts, axis=0)
        self.seg_len = np.hypot(seg[:, 0], seg[:, 1])
        if np.any(self.seg_len == 0):
            raise ValueError("repeated lane point")
        self.tangents = seg / self.seg_len[:, None]
        self.cum = np.concatenate([[0.0], np.cumsum(self.seg_len)])
        self.length = float(self.cum[-1])

    def at(self, s: float) -> tuple[np.ndarray, np.ndarray]:
        """Position and unit tangent at arc length s."""
        i = int(np.clip(np.searchsorted(self.cum, s, side="right") - 1, 0, len(self.seg_len) - 1))
        return self.points[i] + (s - self.cum[i]) * self.tangents[i], self.tangents[i]


@dataclass(frozen=True)
class VehicleState:
    frame: int
    id: int
    x: float
    y: float
    theta: float   # heading, radians in [0, 2 pi)
    vx: float
    vy: float


@dataclass
class GroundTruth:
    states: list[VehicleState] = field(default_factory=list)
    jitter: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))  # per-frame (dx, dy)
    shape: tuple[int, int] = (0, 0)

    @property
    def n_frames(self) -> int:
        return len(self.jitter)

    def in_frame(self, frame: int) -> list[VehicleState]:
        return [s for s in self.states if s.frame == frame]

    def tracks(self) -> dict[int, list[VehicleState]]:
        out: dict[int, list[VehicleState]] = {}
        for s in self.states:
            out.setdefault(s.id, []).append(s)
        return out


@dataclass
class SimResult:
    frames: list[np.ndarray]
    truth: GroundTruth
    lanes: list[LaneSpec]


def value_noise(shape, rng, cell: int = 16, amplitude: float = 0.05) -> np.ndarray:
    h, w = shape
    coarse = rng.uniform(-1.0, 1.0, size=(h // cell + 3, w // cell + 3))
    fine = ndimage.zoom(coarse, cell, order=3, mode="nearest")
    return amplitude * fine[cell:cell + h, cell:cell + w]


def lane_mask(lane: LaneSpec, shape) -> np.ndarray:
    """Pixels within half a lane width of the centreline."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    d = np.full(shape, np.inf)
    pts = np.asarray(lane.points, dtype=float)
    for a, b in zip(pts[:-1], pts[1:]):
        ab = b - a
        t = np.clip(((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / (ab @ ab), 0.0, 1.0)
        np.minimum(d, np.hypot(xx - a[0] - t * ab[0], yy - a[1] - t * ab[1]), out=d)
    return d <= lane.width / 2


def lane_tangent_field(lanes: list[LaneSpec], shape) -> tuple[np.ndarray, np.ndarray]:
    """Per-pixel travel direction (radians) and lane index of the nearest lane segment; -1 off-lane."""
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w].astype(float)
    best = np.full(shape, np.inf)
    angle = np.full(shape, np.nan)
    index = np.full(shape, -1, dtype=int)
    for k, lane in enumerate(lanes):
        path = LanePath(lane.points, lane.direction)
        for a, b, tan in zip(path.points[:-1], path.points[1:], path.tangents):
            ab = b - a
            t = np.clip(((xx - a[0]) * ab[0] + (yy - a[1]) * ab[1]) / (ab @ ab), 0.0, 1.0)
            d = np.hypot(xx - a[0] - t * ab[0], yy - a[1] - t * ab[1])
            closer = (d < best) & (d <= lane.width / 2)
            best = np.where(closer, d, best)
            angle[closer] = math.atan2(tan[1], tan[0])
            index[closer] = k
    return angle, index


def render_car(img: np.ndarray, cx: float, cy: float, heading: float, level: float, samples: int = 4) -> None:
    """Blend an anti-aliased oriented rectangle into img in place."""
    h, w = img.shape
    r = int(math.ceil(math.hypot(CAR_LENGTH, CAR_WIDTH) / 2)) + 1
    x0, x1 = max(0, int(math.floor(cx)) - r), min(w, int(math.floor(cx)) + r + 2)
    y0, y1 = max(0, int(math.floor(cy)) - r), min(h, int(math.floor(cy)) + r + 2)
    if x0 >= x1 or y0 >= y1:
        return
    sub = (np.arange(samples) + 0.5) / samples - 0.5
    px = np.arange(x0, x1)[None, :, None, None] + sub[None, None, None, :]
    py = np.arange(y0, y1)[:, None, None, None] + sub[None, None, :, None]
    c, s = math.cos(heading), math.sin(heading)
    u = (px - cx) * c + (py - cy) * s
    v = -(px - cx) * s + (py - cy) * c
    inside = (np.abs(u) <= CAR_LENGTH / 2) & (np.abs(v) <= CAR_WIDTH / 2)
    cov = inside.mean(axis=(2, 3))
    patch = img[y0:y1, x0:x1]
    img[y0:y1, x0:x1] = patch * (1 - cov) + level * cov


def generate(scene: list[LaneSpec], n_frames: int, shape=(512, 512), intensity_sigma: float = 0.02,
             jitter_sigma: float = 1.0, seed: int = 0, burn_in: bool = True) -> SimResult:
    """Simulate traffic on the given lanes and render ``n_frames`` frames.

    ``shape`` is (height, width). With ``burn_in`` the lanes are pre-filled so
    that traffic is already flowing in frame 0.
    """
    h, w = shape
    ss = np.random.SeedSequence(seed)
    rng_bg, rng_spawn, rng_jitter, rng_noise = (np.random.default_rng(s) for s in ss.spawn(4))

    world = BACKGROUND_LEVEL + value_noise(shape, rng_bg, TEXTURE_CELL, TEXTURE_AMPLITUDE)

    paths = [LanePath(l.points, l.direction) for l in scene]
    vehicles: list[list] = []  # [id, lane index, arc length, brightness]
    next_id = 0

    def step_spawn():
        nonlocal next_id
        for k, lane in enumerate(scene):
            last = [v[2] for v in vehicles if v[1] == k]
            draw = rng_spawn.random()
            level = rng_spawn.uniform(0.6, 0.95)
            if draw < lane.spawn_rate and (not last or min(last) >= lane.min_gap):
                vehicles.append([next_id, k, 0.0, level])
                next_id += 1

    def advance():
        for v in vehicles:
            v[2] += scene[v[1]].speed
        vehicles[:] = [v for v in vehicles if v[2] <= paths[v[1]].length]

    if burn_in and scene:
        warm = max(int(math.ceil(p.length / l.speed)) for p, l in zip(paths, scene))
        for _ in range(warm):
            step_spawn()
            advance()
        # ids restart so that truth ids are compact
        for i, v in enumerate(sorted(vehicles, key=lambda v: v[0])):
            v[0] = i
        next_id = len(vehicles)

    jitter = rng_jitter.normal(0.0, jitter_sigma, size=(n_frames, 2)) if jitter_sigma > 0 else np.zeros((n_frames, 2))
    truth = GroundTruth(jitter=jitter, shape=(h, w))
    frames = []
    for f in range(n_frames):
        step_spawn()
        jx, jy = jitter[f]
        img = ndimage.shift(world, (jy, jx), order=1, mode="nearest") if (jx or jy) else world.copy()
        for vid, k, s, level in sorted(vehicles, key=lambda v: v[0]):
            pos, tan = paths[k].at(s)
            nxt, _ = paths[k].at(s + scene[k].speed)
            heading = math.atan2(tan[1], tan[0]) % (2 * math.pi)
            truth.states.append(VehicleState(f, vid, float(pos[0]), float(pos[1]), heading,
                                             float(nxt[0] - pos[0]), float(nxt[1] - pos[1])))
            render_car(img, pos[0] + jx, pos[1] + jy, heading, level)
        if intensity_sigma > 0:
            img = img + rng_noise.normal(0.0, intensity_sigma, size=img.shape)
        frames.append(np.clip(img, 0.0, 1.0))
        advance()
    return SimResult(frames, truth, list(scene))


def truth_labels(truth: GroundTruth, frame: int, margin: float = 0.0) -> np.ndarray:
    """Image-space centres of the vehicles visible in ``frame`` as an (n, 2) array."""
    if not 0 <= frame < truth.n_frames:
        raise IndexError(f"frame {frame} outside 0..{truth.n_frames - 1}")
    h, w = truth.shape
    jx, jy = truth.jitter[frame]
    pts = [(s.x + jx, s.y + jy) for s in truth.in_frame(frame)]
    pts = [p for p in pts if margin - 0.5 <= p[0] <= w - 0.5 - margin and margin - 0.5 <= p[1] <= h - 0.5 - margin]
    return np.array(pts, dtype=float).reshape(-1, 2)


@dataclass
class LaneAgreement:
    evaluated: int          # lane pixels with enough segments and a mode
    agreeing: int
    per_lane: list          # (evaluated, agreeing) per lane

    @property
    def fraction(self) -> float:
        return self.agreeing / self.evaluated if self.evaluated else float("nan")


def lane_agreement(speed, direction, counts, lanes: list[LaneSpec], min_segments: int = 5,
                   angle_tol: float = math.radians(15), speed_tol: float = 1.0) -> LaneAgreement:
    """Compare modal speed/direction maps with the lanes' true speeds and tangents.

    Pixels within half a lane width of a centreline and covered by at least
    ``min_segments`` tracklet segments are evaluated. A pixel agrees when its
    modal direction is within ``angle_tol`` of the travel direction and its
    modal speed within ``speed_tol`` of the lane speed. Missing modes or a
    zero modal speed count as disagreement.
    """
    speed = np.asarray(speed, dtype=float)
    angle, index = lane_tangent_field(lanes, speed.shape)
    sel = (index >= 0) & (np.asarray(counts) >= min_segments)
    true_speed = np.array([l.speed for l in lanes] + [np.nan])[index]
    d = np.where(np.isnan(direction), np.inf, np.abs(np.mod(np.asarray(direction) - angle + np.pi, 2 * np.pi) - np.pi))
    with np.errstate(invalid="ignore"):
        ok = sel & (d <= angle_tol) & (np.abs(speed - true_speed) <= speed_tol)
    per = [(int((sel & (index == k)).sum()), int((ok & (index == k)).sum())) for k in range(len(lanes))]
    return LaneAgreement(int(sel.sum()), int(ok.sum()), per)


# -- scenes and files ---------------------------------------------------------

def demo_scene() -> list[LaneSpec]:
    """Two opposing straight lanes (3 and 5 px/frame) and one curved lane on 512x512."""
    arc = [(512 - 260 * math.cos(t), 512 - 260 * math.sin(t)) for t in np.linspace(0, math.pi / 2, 46)]
    curve = [(252.0, 540.0)] + arc + [(540.0, 252.0)]
    return [
        LaneSpec([(-20.0, 150.0), (532.0, 150.0)], speed=3.0, spawn_rate=0.06),
        LaneSpec([(-20.0, 174.0), (532.0, 174.0)], speed=5.0, spawn_rate=0.08, direction=-1),
        LaneSpec(curve, speed=4.0, spawn_rate=0.07),
    ]


@dataclass
class SceneConfig:
    lanes: list[LaneSpec]
    width: int = 512
    height: int = 512
    frames: int = 300
    intensity_sigma: float = 0.02
    jitter_sigma: float = 1.0
    seed: int = 0


def parse_lanes(text: str) -> list[LaneSpec]:
    """Lane file: one lane per line, ``speed width spawn_rate direction x,y x,y ...``."""
    lanes = []
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            pts = [tuple(float(c) for c in t.split(",")) for t in tok[4:]]
            if any(len(p) != 2 for p in pts):
                raise ValueError("points must be x,y pairs")
            lanes.append(LaneSpec(pts, speed=float(tok[0]), width=float(tok[1]),
                                  spawn_rate=float(tok[2]), direction=int(tok[3])))
        except (IndexError, ValueError) as exc:
            raise ValueError(f"lane line {lineno}: {exc}") from None
    return lanes


def format_lanes(lanes: list[LaneSpec]) -> str:
    lines = ["# speed width spawn_rate direction x,y ..."]
    for l in lanes:
        pts = " ".join(f"{x!r},{y!r}" for x, y in l.points)
        lines.append(f"{l.speed!r} {l.width!r} {l.spawn_rate!r} {l.direction} {pts}")
    return "\n".join(lines) + "\n"


_SCENE_KEYS = {"width": int, "height": int, "frames": int, "intensity_sigma": float,
               "jitter_sigma": float, "seed": int, "lanes": str}


def load_scene(path) -> SceneConfig:
    """Scene file of ``key = value`` lines; ``lanes`` names the lane polyline file."""
    path = Path(path)
    values = {}
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key = value")
        key, val = (t.strip() for t in line.split("=", 1))
        if key not in _SCENE_KEYS:
            raise ValueError(f"{path}:{lineno}: unknown scene key '{key}'")
        values[key] = _SCENE_KEYS[key](val)
    lanes_file = values.pop("lanes", None)
    lanes = parse_lanes((path.parent / lanes_file).read_text()) if lanes_file else []
    return SceneConfig(lanes=lanes, **values)


def save_scene(path, cfg: SceneConfig, lanes_name: str = "lanes.txt") -> None:
    path = Path(path)
    (path.parent / lanes_name).write_text(format_lanes(cfg.lanes))
    path.write_text(
        f"width = {cfg.width}\nheight = {cfg.height}\nframes = {cfg.frames}\n"
        f"intensity_sigma = {cfg.intensity_sigma!r}\njitter_sigma = {cfg.jitter_sigma!r}\n"
        f"seed = {cfg.seed}\nlanes = {lanes_name}\n")


def write_truth(path, truth: GroundTruth) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame", "id", "x", "y", "theta", "vx", "vy"])
        for s in truth.states:
            out.writerow([s.frame, s.id, repr(s.x), repr(s.y), repr(s.theta), repr(s.vx), repr(s.vy)])


def write_jitter(path, truth: GroundTruth) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame", "dx", "dy"])
        for f, (dx, dy) in enumerate(truth.jitter.tolist()):
            out.writerow([f, repr(dx), repr(dy)])


def read_truth(path, jitter_path=None, shape=(0, 0)) -> GroundTruth:
    with open(path, newline="") as fh:
        states = [VehicleState(int(r["frame"]), int(r["id"]), float(r["x"]), float(r["y"]),
                               float(r["theta"]), float(r["vx"]), float(r["vy"]))
                  for r in csv.DictReader(fh)]
    if jitter_path is not None:
        with open(jitter_path, newline="") as fh:
            jitter = np.array([[float(r["dx"]), float(r["dy"])] for r in csv.DictReader(fh)]).reshape(-1, 2)
    else:
        n = max((s.frame for s in states), default=-1) + 1
        jitter = np.zeros((n, 2))
    return GroundTruth(states, jitter, tuple(shape))
