"""Boosted rectangle-feature pixel classifier.

Each weak learner thresholds a feature equal to the summed intensity of
1-5 "positive" rectangles minus 1-5 "negative" rectangles placed at random
offsets around the probe pixel. Discrete AdaBoost combines them into a
real-valued margin, evaluated at every pixel to form the response image.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numba
import numpy as np

CORNER_SIGMA = 10.0
MAX_RECTS = 5
WINDOW = 40          # bound on |corner offset|
PAD = WINDOW + 1     # zero border so every rectangle read stays inside the table

FOREGROUND_RADIUS = 6.0
BACKGROUND_RADIUS = 20.0
FOREGROUND_FRACTION = 0.15

Rect = tuple[int, int, int, int]  # half-open offsets (x0, y0, x1, y1)


@dataclass(frozen=True)
class RectFeature:
    positive: tuple[Rect, ...]
    negative: tuple[Rect, ...]

    def __post_init__(self):
        for group in (self.positive, self.negative):
            if not 1 <= len(group) <= MAX_RECTS:
                raise ValueError("a feature needs 1-5 rectangles of each sign")
            for x0, y0, x1, y1 in group:
                if x1 < x0 or y1 < y0:
                    raise ValueError(f"negative-area rectangle {(x0, y0, x1, y1)}")
                if min(x0, y0) < -WINDOW or max(x1, y1) > WINDOW + 1:
                    raise ValueError(f"rectangle {(x0, y0, x1, y1)} outside feature window")

    def corner_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Rectangles as an (n, 4) int array plus a +1/-1 sign per row."""
        rects = np.array(self.positive + self.negative, dtype=np.int64).reshape(-1, 4)
        signs = np.array([1.0] * len(self.positive) + [-1.0] * len(self.negative))
        return rects, signs


@dataclass(frozen=True)
class WeakClassifier:
    feature: RectFeature
    threshold: float
    polarity: int
    alpha: float

    def predict(self, values: np.ndarray) -> np.ndarray:
        return np.where(values > self.threshold, self.polarity, -self.polarity).astype(float)


@dataclass
class StrongClassifier:
    rounds: list[WeakClassifier] = field(default_factory=list)
    # per-round (weighted error, exponential loss); filled by train(), not persisted
    history: list[tuple[float, float]] = field(default_factory=list, compare=False, repr=False)

    def __len__(self):
        return len(self.rounds)


@dataclass
class LabeledPixelSet:
    image: np.ndarray
    x: np.ndarray
    y: np.ndarray
    label: np.ndarray  # +1 foreground, -1 background

    def __len__(self):
        return len(self.label)

    @property
    def foreground_fraction(self) -> float:
        return float(np.mean(self.label > 0)) if len(self) else 0.0

    @classmethod
    def concat(cls, sets: Sequence["LabeledPixelSet"]) -> "LabeledPixelSet":
        return cls(*(np.concatenate([getattr(s, k) for s in sets]) for k in ("image", "x", "y", "label")))

    def subset(self, idx) -> "LabeledPixelSet":
        return LabeledPixelSet(self.image[idx], self.x[idx], self.y[idx], self.label[idx])


# -- labels -------------------------------------------------------------------

def build_labels(car_centres, shape, subsample_seed, image_id: int = 0,
                 fg_radius: float = FOREGROUND_RADIUS, bg_radius: float = BACKGROUND_RADIUS,
                 fg_fraction: float = FOREGROUND_FRACTION) -> LabeledPixelSet:
    """Label pixels near marked car centres as foreground and far ones as background.

    ``shape`` is (height, width). Background pixels are subsampled so that
    foreground makes up ``fg_fraction`` of the result.
    """
    centres = np.asarray(car_centres, dtype=float).reshape(-1, 2)
    if len(centres) == 0:
        raise ValueError("no car centres: nothing to train on")
    h, w = shape
    if np.any(centres < -0.5) or np.any(centres[:, 0] > w - 0.5) or np.any(centres[:, 1] > h - 0.5):
        raise ValueError("car centre outside the image")
    d2 = np.full((h, w), np.inf)
    reach = int(math.ceil(bg_radius)) + 1
    for cx, cy in centres:
        x0, x1 = max(0, int(cx) - reach), min(w, int(cx) + reach + 1)
        y0, y1 = max(0, int(cy) - reach), min(h, int(cy) + reach + 1)
        xs = np.arange(x0, x1) - cx
        ys = np.arange(y0, y1) - cy
        np.minimum(d2[y0:y1, x0:x1], ys[:, None] ** 2 + xs[None, :] ** 2, out=d2[y0:y1, x0:x1])
    fy, fx = np.nonzero(d2 <= fg_radius ** 2)
    by, bx = np.nonzero(d2 > bg_radius ** 2)
    n_bg = int(round(len(fx) * (1 - fg_fraction) / fg_fraction))
    if n_bg < len(bx):
        rng = np.random.default_rng(subsample_seed)
        keep = np.sort(rng.choice(len(bx), size=n_bg, replace=False))
        bx, by = bx[keep], by[keep]
    xs = np.concatenate([fx, bx])
    ys = np.concatenate([fy, by])
    lab = np.concatenate([np.ones(len(fx), dtype=np.int64), -np.ones(len(bx), dtype=np.int64)])
    return LabeledPixelSet(np.full(len(xs), image_id, dtype=np.int64), xs.astype(np.int64), ys.astype(np.int64), lab)


def write_labels(path, labels: LabeledPixelSet) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["frame", "x", "y", "label"])
        for row in zip(labels.image.tolist(), labels.x.tolist(), labels.y.tolist(), labels.label.tolist()):
            out.writerow([row[0], row[1], row[2], 1 if row[3] > 0 else 0])


def read_labels(path) -> LabeledPixelSet:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    arr = np.array([[int(r["frame"]), int(r["x"]), int(r["y"]), int(r["label"])] for r in rows],
                   dtype=np.int64).reshape(-1, 4)
    return LabeledPixelSet(arr[:, 0], arr[:, 1], arr[:, 2], np.where(arr[:, 3] > 0, 1, -1))


# -- features -----------------------------------------------------------------

def _random_rect(rng, sigma: float) -> Rect:
    c = np.clip(np.rint(rng.normal(0.0, sigma, size=4)), -WINDOW, WINDOW).astype(int)
    x0, x1 = sorted((c[0], c[2]))
    y0, y1 = sorted((c[1], c[3]))
    return (int(x0), int(y0), int(x1) + 1, int(y1) + 1)


def sample_feature(rng, sigma: float = CORNER_SIGMA) -> RectFeature:
    """Draw a random feature: 1-5 rectangles of each sign, corners ~ N(0, sigma^2).

    Corners are rounded to the pixel grid and both corner pixels are covered,
    so every rectangle has at least one pixel. Rectangles may overlap.
    """
    n_pos = int(rng.integers(1, MAX_RECTS + 1))
    n_neg = int(rng.integers(1, MAX_RECTS + 1))
    pos = tuple(_random_rect(rng, sigma) for _ in range(n_pos))
    neg = tuple(_random_rect(rng, sigma) for _ in range(n_neg))
    return RectFeature(pos, neg)


def padded_integral(img) -> np.ndarray:
    """Integral table of the image surrounded by a PAD-wide zero border."""
    arr = np.asarray(img, dtype=float)
    h, w = arr.shape
    table = np.zeros((h + 2 * PAD + 1, w + 2 * PAD + 1))
    table[PAD + 1:PAD + 1 + h, PAD + 1:PAD + 1 + w] = np.cumsum(np.cumsum(arr, axis=0), axis=1)
    # carry the running sums across the right and bottom borders
    table[PAD + 1 + h:, :] = table[PAD + h:PAD + 1 + h, :]
    table[:, PAD + 1 + w:] = table[:, PAD + w:PAD + 1 + w]
    return table


class _SampleTable:
    """Flattened integral tables of the training images, addressable per sample."""

    def __init__(self, labels: LabeledPixelSet, images):
        flats, offsets, strides = [], {}, {}
        pos = 0
        for img_id in np.unique(labels.image).tolist():
            table = padded_integral(images[img_id])
            offsets[img_id] = pos
            strides[img_id] = table.shape[1]
            flats.append(table.ravel())
            pos += table.size
        self.flat = np.concatenate(flats)
        self.stride = np.array([strides[i] for i in labels.image.tolist()], dtype=np.int64)
        off = np.array([offsets[i] for i in labels.image.tolist()], dtype=np.int64)
        self.base = off + (labels.y + PAD) * self.stride + labels.x + PAD
        # visit samples in memory order; values() scatters results back
        self.order = np.argsort(self.base, kind="stable")
        self.sorted_base = self.base[self.order]
        self.sorted_stride = self.stride[self.order]

    def values(self, feature: RectFeature) -> np.ndarray:
        rects, signs = feature.corner_table()
        out = np.empty(len(self.base))
        out[self.order] = _sample_values(self.flat, self.sorted_base, self.sorted_stride, rects, signs)
        return out


@numba.njit(cache=True)
def _sample_values(flat, base, stride, rects, signs):
    n = base.shape[0]
    out = np.zeros(n)
    for r in range(rects.shape[0]):
        x0, y0, x1, y1 = rects[r, 0], rects[r, 1], rects[r, 2], rects[r, 3]
        s = signs[r]
        for i in range(n):
            b = base[i]
            st = stride[i]
            out[i] += s * (flat[b + y1 * st + x1] - flat[b + y0 * st + x1]
                           - flat[b + y1 * st + x0] + flat[b + y0 * st + x0])
    return out


@numba.njit(cache=True, nogil=True)
def _accumulate_response(table, h, w, rects, signs, starts, thresholds, polarity, alpha):
    out = np.zeros((h, w))
    vals = np.zeros(w)
    for f in range(thresholds.shape[0]):
        a = alpha[f] * polarity[f]
        thr = thresholds[f]
        for y in range(h):
            vals[:] = 0.0
            for r in range(starts[f], starts[f + 1]):
                x0, y0, x1, y1 = rects[r, 0], rects[r, 1], rects[r, 2], rects[r, 3]
                s = signs[r]
                # row views keep the inner loop contiguous (and vectorizable)
                p = table[y + y1, x1:x1 + w]
                q = table[y + y0, x1:x1 + w]
                u = table[y + y1, x0:x0 + w]
                v = table[y + y0, x0:x0 + w]
                for x in range(w):
                    vals[x] += s * (p[x] - q[x] - u[x] + v[x])
            row = out[y]
            for x in range(w):
                row[x] += a if vals[x] > thr else -a
    return out


def feature_image(feature: RectFeature, img) -> np.ndarray:
    """Feature value at every pixel, zero intensity outside the image."""
    rects, signs = feature.corner_table()
    arr = np.asarray(img, dtype=float)
    table = padded_integral(arr)
    h, w = arr.shape
    out = np.zeros((h, w))
    for (x0, y0, x1, y1), s in zip(rects.tolist(), signs.tolist()):
        out += s * (table[PAD + y1:PAD + y1 + h, PAD + x1:PAD + x1 + w]
                    - table[PAD + y0:PAD + y0 + h, PAD + x1:PAD + x1 + w]
                    - table[PAD + y1:PAD + y1 + h, PAD + x0:PAD + x0 + w]
                    + table[PAD + y0:PAD + y0 + h, PAD + x0:PAD + x0 + w])
    return out


def respond(clf: StrongClassifier, img) -> np.ndarray:
    """Classifier margin at every pixel (the response image)."""
    arr = np.asarray(img, dtype=float)
    h, w = arr.shape
    if not clf.rounds:
        return np.zeros((h, w))
    table = padded_integral(arr)
    tables = [wc.feature.corner_table() for wc in clf.rounds]
    rects = np.concatenate([t[0] for t in tables]) + PAD
    signs = np.concatenate([t[1] for t in tables])
    starts = np.concatenate([[0], np.cumsum([len(t[1]) for t in tables])]).astype(np.int64)
    thresholds = np.array([wc.threshold for wc in clf.rounds])
    polarity = np.array([float(wc.polarity) for wc in clf.rounds])
    alpha = np.array([wc.alpha for wc in clf.rounds])
    return _accumulate_response(table, h, w, rects, signs, starts, thresholds, polarity, alpha)


# -- boosting -----------------------------------------------------------------

def best_stump(values: np.ndarray, y: np.ndarray, weights: np.ndarray) -> tuple[float, float, int]:
    """Exact weighted-error minimizing threshold and polarity for one feature.

    Returns (error, threshold, polarity). A stump predicts ``polarity`` when
    the value exceeds the threshold and ``-polarity`` otherwise. Among equal
    errors polarity +1 and the lowest threshold win.
    """
    values = np.ascontiguousarray(values, dtype=float)
    order = np.argsort(values)
    err, thr, pol = _stump_sweep(values, order, np.ascontiguousarray(y, dtype=float),
                                 np.ascontiguousarray(weights, dtype=float))
    return float(err), float(thr), int(pol)


@numba.njit(cache=True)
def _stump_sweep(values, order, y, weights):
    n = values.shape[0]
    pos_total = 0.0
    neg_total = 0.0
    for i in range(n):
        if y[i] > 0:
            pos_total += weights[i]
        else:
            neg_total += weights[i]
    # k samples at or below the threshold; k = 0 first
    best_p, k_p = neg_total, 0
    best_n, k_n = pos_total, 0
    pos_below = 0.0
    neg_below = 0.0
    for k in range(1, n + 1):
        i = order[k - 1]
        if y[i] > 0:
            pos_below += weights[i]
        else:
            neg_below += weights[i]
        if k < n and values[order[k]] == values[i]:
            continue
        e_p = pos_below + (neg_total - neg_below)
        e_n = neg_below + (pos_total - pos_below)
        if e_p < best_p:
            best_p, k_p = e_p, k
        if e_n < best_n:
            best_n, k_n = e_n, k
    if best_n < best_p:
        err, k, pol = best_n, k_n, -1
    else:
        err, k, pol = best_p, k_p, 1
    if k == 0:
        thr = values[order[0]] - 1.0
    elif k == n:
        thr = values[order[n - 1]] + 1.0
    else:
        thr = 0.5 * (values[order[k - 1]] + values[order[k]])
    return err, thr, pol


def train(labels: LabeledPixelSet, images: Mapping[int, np.ndarray] | Sequence[np.ndarray],
          n_rounds: int = 200, candidate_pool_size: int = 250, rng=None,
          progress=None) -> StrongClassifier:
    """Discrete AdaBoost over freshly sampled random rectangle features.

    Each round draws ``candidate_pool_size`` features, picks the stump with the
    lowest weighted error (earliest candidate wins ties) and reweights. Stops
    early, returning the rounds so far, once no stump beats error 0.5.
    """
    y = np.asarray(labels.label, dtype=float)
    if len(y) == 0 or np.all(y > 0) or np.all(y < 0):
        raise ValueError("training labels must contain both classes")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    samples = _SampleTable(labels, images)
    n = len(y)
    weights = np.full(n, 1.0 / n)
    margin = np.zeros(n)
    clf = StrongClassifier()
    for t in range(n_rounds):
        best = None
        for _ in range(candidate_pool_size):
            feat = sample_feature(rng)
            vals = samples.values(feat)
            err, thr, pol = best_stump(vals, y, weights)
            if best is None or err < best[0]:
                best = (err, thr, pol, feat, vals)
        err, thr, pol, feat, vals = best
        if err >= 0.5:
            break
        err_c = min(max(err, 1e-12), 1 - 1e-12)
        alpha = 0.5 * math.log((1 - err_c) / err_c)
        wc = WeakClassifier(feat, thr, pol, alpha)
        h = wc.predict(vals)
        margin += alpha * h
        weights = weights * np.exp(-alpha * y * h)
        weights /= weights.sum()
        clf.rounds.append(wc)
        clf.history.append((err, float(np.mean(np.exp(-y * margin)))))
        if progress is not None:
            progress(t, err)
    return clf


# -- persistence --------------------------------------------------------------

def save_classifier(path, clf: StrongClassifier) -> None:
    """One line per round: alpha polarity threshold P n rects... N m rects..."""
    lines = ["# velfield boosted classifier v1"]
    for wc in clf.rounds:
        parts = [repr(wc.alpha), str(wc.polarity), repr(wc.threshold)]
        for tag, group in (("P", wc.feature.positive), ("N", wc.feature.negative)):
            parts += [tag, str(len(group))]
            for rect in group:
                parts += [str(v) for v in rect]
        lines.append(" ".join(parts))
    Path(path).write_text("\n".join(lines) + "\n")


def load_classifier(path) -> StrongClassifier:
    clf = StrongClassifier()
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        tok = line.split()
        try:
            alpha, pol, thr = float(tok[0]), int(tok[1]), float(tok[2])
            i = 3
            groups = []
            for tag in ("P", "N"):
                if tok[i] != tag:
                    raise ValueError(f"expected {tag}")
                count = int(tok[i + 1])
                i += 2
                rects = []
                for _ in range(count):
                    rects.append(tuple(int(v) for v in tok[i:i + 4]))
                    i += 4
                groups.append(tuple(rects))
            if i != len(tok):
                raise ValueError("trailing tokens")
        except (IndexError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: malformed classifier line ({exc})") from None
        clf.rounds.append(WeakClassifier(RectFeature(*groups), thr, pol, alpha))
    return clf
