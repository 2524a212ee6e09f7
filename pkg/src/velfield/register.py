"""Robust image-to-image registration machinery.

* :class:`PolyprojectiveTransform` - a rational quadratic warp
  ``x' = P1(x, y) / Q(x, y)``, ``y' = P2(x, y) / Q(x, y)`` with the constant
  term of Q fixed to 1 (17 free coefficients).
* :func:`fit_sse` - least squares fit by Nelder-Mead downhill simplex.
* :func:`case_deletion_fit` - repeatedly drop the worst 5% of correspondences
  and refit until the mean residual is small.
* :func:`ncc_match` - zero-normalized cross correlation template search.
* :func:`build_displacement_field` - robust per-cell displacement vectors,
  bilinearly interpolated between cell centres.

Monomial order used throughout is ``[1, x, y, x*x, x*y, y*y]``.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import signal

POLE_EPS = 1e-9
N_PARAMS = 17
MIN_POINTS = 9          # ceil(17 / 2)
TRANSFORM_HEADER = "# velfield polyprojective transform v1"


class PoleError(ValueError):
    """The transform's denominator is not safely positive at a point."""


class ZeroVarianceError(ValueError):
    """A template patch has no intensity variation, so NCC is undefined."""


def monomials(x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return np.stack([np.ones_like(x), x, y, x * x, x * y, y * y], axis=-1)


def _substitution(scale: float, tx: float, ty: float) -> np.ndarray:
    """Matrix S with monomials(s*u + tx, s*v + ty) = S @ monomials(u, v)."""
    s = scale
    return np.array([
        [1, 0, 0, 0, 0, 0],
        [tx, s, 0, 0, 0, 0],
        [ty, 0, s, 0, 0, 0],
        [tx * tx, 2 * s * tx, 0, s * s, 0, 0],
        [tx * ty, s * ty, s * tx, 0, s * s, 0],
        [ty * ty, 0, 2 * s * ty, 0, 0, s * s],
    ], dtype=float)


@dataclass(frozen=True)
class PolyprojectiveTransform:
    """17 coefficients: P1 (6), P2 (6), then Q without its constant term (5)."""

    params: tuple

    def __post_init__(self):
        p = np.asarray(self.params, dtype=float).ravel()
        if p.size != N_PARAMS:
            raise ValueError(f"expected {N_PARAMS} coefficients, got {p.size}")
        if not np.all(np.isfinite(p)):
            raise ValueError("non-finite transform coefficient")
        object.__setattr__(self, "params", tuple(p.tolist()))

    @classmethod
    def identity(cls) -> "PolyprojectiveTransform":
        p = np.zeros(N_PARAMS)
        p[1] = 1.0    # P1 = x
        p[8] = 1.0    # P2 = y
        return cls(p)

    @classmethod
    def from_polynomials(cls, p1, p2, q) -> "PolyprojectiveTransform":
        """Build from full coefficient vectors, rescaling so Q's constant term is 1."""
        p1, p2, q = (np.asarray(c, dtype=float) for c in (p1, p2, q))
        if abs(q[0]) <= POLE_EPS:
            raise PoleError("denominator vanishes at the origin; cannot normalize")
        return cls(np.concatenate([p1 / q[0], p2 / q[0], q[1:] / q[0]]))

    @classmethod
    def from_homography(cls, H) -> "PolyprojectiveTransform":
        H = np.asarray(H, dtype=float)
        z = np.zeros(3)
        return cls.from_polynomials(np.r_[H[0, 2], H[0, 0], H[0, 1], z],
                                    np.r_[H[1, 2], H[1, 0], H[1, 1], z],
                                    np.r_[H[2, 2], H[2, 0], H[2, 1], z])

    @property
    def array(self) -> np.ndarray:
        return np.array(self.params)

    def polynomials(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        p = self.array
        return p[0:6], p[6:12], np.r_[1.0, p[12:17]]

    @property
    def is_homography(self) -> bool:
        p1, p2, q = self.polynomials()
        return not (np.any(p1[3:]) or np.any(p2[3:]) or np.any(q[3:]))

    def denominator(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        return monomials(pts[:, 0], pts[:, 1]) @ self.polynomials()[2]

    def apply_many(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        m = monomials(pts[:, 0], pts[:, 1])
        p1, p2, q = self.polynomials()
        den = m @ q
        bad = den <= POLE_EPS
        if np.any(bad):
            k = int(np.argmax(bad))
            raise PoleError(f"denominator {den[k]:.3g} at point {tuple(pts[k])}")
        return np.stack([m @ p1 / den, m @ p2 / den], axis=1)

    def apply(self, p) -> tuple[float, float]:
        x, y = self.apply_many(p)[0]
        return float(x), float(y)

    def reparametrize(self, src_scale, src_shift, dst_scale, dst_shift) -> "PolyprojectiveTransform":
        """The same mapping expressed in rescaled coordinates.

        With ``x = src_scale * u + src_shift`` and ``x' = dst_scale * w + dst_shift``,
        returns the transform taking u to w.
        """
        S = _substitution(src_scale, *src_shift)
        p1, p2, q = (S.T @ c for c in self.polynomials())
        return PolyprojectiveTransform.from_polynomials((p1 - dst_shift[0] * q) / dst_scale,
                                                        (p2 - dst_shift[1] * q) / dst_scale, q)


# -- correspondences ----------------------------------------------------------

@dataclass
class CorrespondenceSet:
    src: np.ndarray
    dst: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.src = np.asarray(self.src, dtype=float).reshape(-1, 2)
        self.dst = np.asarray(self.dst, dtype=float).reshape(-1, 2)
        if self.src.shape != self.dst.shape:
            raise ValueError("source and target point counts differ")
        self.weights = (np.ones(len(self.src)) if self.weights is None
                        else np.asarray(self.weights, dtype=float).ravel())
        if self.weights.shape != (len(self.src),):
            raise ValueError("one weight per correspondence required")
        if not (np.all(np.isfinite(self.src)) and np.all(np.isfinite(self.dst))
                and np.all(np.isfinite(self.weights))):
            raise ValueError("non-finite correspondence")
        if np.any(self.weights < 0):
            raise ValueError("negative weight")

    def __len__(self) -> int:
        return len(self.src)

    def subset(self, idx) -> "CorrespondenceSet":
        return CorrespondenceSet(self.src[idx], self.dst[idx], self.weights[idx])

    def residuals(self, T: PolyprojectiveTransform) -> np.ndarray:
        d = T.apply_many(self.src) - self.dst
        return np.hypot(d[:, 0], d[:, 1])


def _normalizer(pts: np.ndarray) -> tuple[float, np.ndarray]:
    shift = pts.mean(axis=0)
    scale = float(np.sqrt(((pts - shift) ** 2).sum(axis=1).mean() / 2.0))
    return (scale if scale > 0 else 1.0), shift


# -- downhill simplex ---------------------------------------------------------

@numba.njit(cache=True)
def _sse(p, M, tx, ty, w, D, qmin):
    # D: monomials of domain points; require min Q > 0 and min Q >= qmin * max Q
    lo = np.inf
    hi = -np.inf
    for k in range(D.shape[0]):
        q = D[k, 0]
        for j in range(1, 6):
            q += p[11 + j] * D[k, j]
        lo = min(lo, q)
        hi = max(hi, q)
    if lo <= 0.0 or lo < qmin * hi:
        return np.inf
    total = 0.0
    for k in range(M.shape[0]):
        q = M[k, 0]
        a = 0.0
        b = 0.0
        for j in range(6):
            a += p[j] * M[k, j]
            b += p[6 + j] * M[k, j]
        for j in range(1, 6):
            q += p[11 + j] * M[k, j]
        if q <= 1e-12:
            return np.inf
        dx = a / q - tx[k]
        dy = b / q - ty[k]
        total += w[k] * (dx * dx + dy * dy)
    return total


@numba.njit(cache=True)
def _nelder_mead(x0, steps, M, tx, ty, w, D, qmin, ftol, max_iter, history):
    """Adaptive-coefficient Nelder-Mead; returns (best, f_best, iterations).

    ``history[k]`` receives the best objective after iteration k.
    """
    n = x0.shape[0]
    alpha, beta = 1.0, 1.0 + 2.0 / n
    gamma, delta = 0.75 - 0.5 / n, 1.0 - 1.0 / n
    sim = np.empty((n + 1, n))
    fs = np.empty(n + 1)
    for i in range(n + 1):
        sim[i] = x0
        if i > 0:
            sim[i, i - 1] += steps[i - 1]
        fs[i] = _sse(sim[i], M, tx, ty, w, D, qmin)
    it = 0
    while it < max_iter:
        order = np.argsort(fs, kind="mergesort")
        sim = sim[order]
        fs = fs[order]
        if fs[n] - fs[0] <= ftol * abs(fs[0]) or fs[n] - fs[0] <= 1e-300:
            break
        c = np.zeros(n)
        for i in range(n):
            c += sim[i]
        c /= n
        xr = c + alpha * (c - sim[n])
        fr = _sse(xr, M, tx, ty, w, D, qmin)
        shrink = False
        if fr < fs[0]:
            xe = c + beta * (xr - c)
            fe = _sse(xe, M, tx, ty, w, D, qmin)
            if fe < fr:
                sim[n], fs[n] = xe, fe
            else:
                sim[n], fs[n] = xr, fr
        elif fr < fs[n - 1]:
            sim[n], fs[n] = xr, fr
        elif fr < fs[n]:
            xc = c + gamma * (xr - c)
            fc = _sse(xc, M, tx, ty, w, D, qmin)
            if fc <= fr:
                sim[n], fs[n] = xc, fc
            else:
                shrink = True
        else:
            xc = c - gamma * (c - sim[n])
            fc = _sse(xc, M, tx, ty, w, D, qmin)
            if fc < fs[n]:
                sim[n], fs[n] = xc, fc
            else:
                shrink = True
        if shrink:
            for i in range(1, n + 1):
                sim[i] = sim[0] + delta * (sim[i] - sim[0])
                fs[i] = _sse(sim[i], M, tx, ty, w, D, qmin)
        history[it] = min(fs.min(), fs[0])
        it += 1
    b = int(np.argmin(fs))
    return sim[b].copy(), fs[b], it


@dataclass
class SimplexFit:
    transform: PolyprojectiveTransform
    sse: float
    iterations: int
    history: np.ndarray          # best objective after each iteration (pixel units)


def default_domain(src) -> np.ndarray:
    src = np.asarray(src, dtype=float).reshape(-1, 2)
    return np.r_[np.minimum(src.min(axis=0), 0.0), src.max(axis=0)]


def minimize_sse(corrs: CorrespondenceSet, init: PolyprojectiveTransform | None = None,
                 ftol: float = 1e-10, max_iter: int = 20000, restarts: int = 3,
                 min_denominator: float = 0.5, domain=None) -> SimplexFit:
    """Fit by downhill simplex on the weighted sum of squared residuals.

    The search runs in centred, unit-scaled coordinates (an exact
    reparametrization of the same mapping) so that all coefficients are of
    comparable size. Candidates whose denominator, sampled over the image
    domain, is not positive or whose smallest value is below
    ``min_denominator`` times its largest are rejected; this keeps poles
    well away from the image. ``domain`` is the (x0, y0, x1, y1) box of the
    source image; by default the box spanning the origin and all source
    points. After convergence the simplex is rebuilt around the best
    vertex up to ``restarts`` times while that still improves the objective.
    """
    if len(corrs) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} correspondences, got {len(corrs)}")
    init = PolyprojectiveTransform.identity() if init is None else init
    s_src, t_src = _normalizer(corrs.src)
    s_dst, t_dst = _normalizer(corrs.dst)
    u = (corrs.src - t_src) / s_src
    wtgt = (corrs.dst - t_dst) / s_dst
    M = monomials(u[:, 0], u[:, 1])
    x = init.reparametrize(s_src, t_src, s_dst, t_dst).array
    tx, ty = np.ascontiguousarray(wtgt[:, 0]), np.ascontiguousarray(wtgt[:, 1])
    w = corrs.weights
    box = default_domain(corrs.src) if domain is None else np.asarray(domain, dtype=float)
    lo = (box[:2] - t_src) / s_src
    hi = (box[2:] - t_src) / s_src
    g = np.linspace(0.0, 1.0, 9)
    gx, gy = np.meshgrid(lo[0] + g * (hi[0] - lo[0]), lo[1] + g * (hi[1] - lo[1]))
    D = monomials(gx.ravel(), gy.ravel())
    qmin = float(min_denominator)
    history = []
    total_iter = 0
    f = _sse(x, M, tx, ty, w, D, qmin)
    if not np.isfinite(f):
        raise PoleError("initial transform has a pole (or a near-pole) over the image domain")
    for attempt in range(restarts + 1):
        steps = 1e-3 * np.maximum(np.abs(x), 1.0)
        hist = np.empty(max_iter)
        xn, fn, it = _nelder_mead(x, steps, M, tx, ty, w, D, qmin, ftol, max_iter, hist)
        history.append(hist[:it])
        total_iter += it
        improved = fn < f * (1 - ftol)
        if fn <= f:
            x, f = xn, fn
        if not improved or total_iter >= max_iter:
            break
    T = PolyprojectiveTransform(x).reparametrize(1.0 / s_src, -t_src / s_src, 1.0 / s_dst, -t_dst / s_dst)
    scale2 = s_dst * s_dst
    hist = np.minimum.accumulate(np.concatenate(history)) * scale2 if history else np.zeros(0)
    return SimplexFit(T, float(f * scale2), total_iter, hist)


def fit_sse(corrs: CorrespondenceSet, init: PolyprojectiveTransform | None = None, **kw) -> PolyprojectiveTransform:
    """Least-squares transform by Nelder-Mead, starting from ``init``."""
    return minimize_sse(corrs, init, **kw).transform


# -- case deletion ------------------------------------------------------------

@dataclass
class CaseDeletionResult:
    transform: PolyprojectiveTransform
    survivors: np.ndarray              # indices into the input set
    converged: bool
    reason: str
    deleted: list = field(default_factory=list)        # per round, worst first
    mean_history: list = field(default_factory=list)   # survivor mean residual after each fit
    residuals: np.ndarray | None = None                # survivors' residuals of the final fit
    round_residuals: list = field(default_factory=list)  # (survivor indices, residuals) per fit

    def __iter__(self):
        yield self.transform
        yield self.survivors

    @property
    def deletion_order(self) -> np.ndarray:
        return np.concatenate(self.deleted) if self.deleted else np.zeros(0, dtype=int)

    @property
    def mean_residual(self) -> float:
        return self.mean_history[-1]


def case_deletion_fit(corrs: CorrespondenceSet, init: PolyprojectiveTransform | None = None,
                      drop_fraction: float = 0.05, target_mean_err: float = 2.0,
                      max_rounds: int = 40, **fit_kw) -> CaseDeletionResult:
    """Fit, drop the worst ceil(drop_fraction * n) points, refit from the last solution.

    Stops with ``converged=True`` once the weighted mean residual of the
    survivors is below ``target_mean_err``. Running out of points (fewer than
    nine would remain) or rounds gives ``converged=False`` with the last fit.
    """
    if len(corrs) < MIN_POINTS:
        raise ValueError(f"need at least {MIN_POINTS} correspondences, got {len(corrs)}")
    if not 0 < drop_fraction < 1:
        raise ValueError("drop_fraction must be in (0, 1)")
    alive = np.arange(len(corrs))
    T = PolyprojectiveTransform.identity() if init is None else init
    fit_kw.setdefault("domain", default_domain(corrs.src))
    result = CaseDeletionResult(T, alive, False, "")
    for rnd in range(max_rounds):
        sub = corrs.subset(alive)
        T = fit_sse(sub, T, **fit_kw)
        res = sub.residuals(T)
        mean = float(np.average(res, weights=sub.weights)) if sub.weights.sum() > 0 else float(res.mean())
        result.transform, result.survivors, result.residuals = T, alive, res
        result.mean_history.append(mean)
        result.round_residuals.append((alive, res))
        if mean < target_mean_err:
            result.converged, result.reason = True, f"mean residual {mean:.3f} px below target"
            return result
        k = int(math.ceil(drop_fraction * len(alive) - 1e-12))
        if len(alive) - k < MIN_POINTS:
            result.reason = f"deleting {k} more would leave fewer than {MIN_POINTS} points"
            return result
        if rnd == max_rounds - 1:
            break
        worst = np.argsort(-res, kind="stable")[:k]
        result.deleted.append(alive[worst])
        alive = np.delete(alive, worst)
    result.reason = f"no convergence after {max_rounds} rounds"
    return result


# -- normalized cross correlation --------------------------------------------

def _window_sums(img: np.ndarray, ph: int, pw: int) -> np.ndarray:
    c = np.zeros((img.shape[0] + 1, img.shape[1] + 1))
    c[1:, 1:] = img.cumsum(0).cumsum(1)
    return c[ph:, pw:] - c[:-ph, pw:] - c[ph:, :-pw] + c[:-ph, :-pw]


def ncc_surface(patch, region) -> np.ndarray:
    """ZNCC score for every placement of ``patch`` inside ``region``.

    Entry [oy, ox] compares the patch with region[oy:oy+ph, ox:ox+pw];
    placements over a flat region window score NaN.
    """
    patch = np.asarray(patch, dtype=float)
    region = np.asarray(region, dtype=float)
    ph, pw = patch.shape
    if region.shape[0] < ph or region.shape[1] < pw:
        raise ValueError("search region smaller than the patch")
    n = ph * pw
    zp = patch - patch.mean()
    sp = math.sqrt(float((zp * zp).sum()))
    if sp <= 1e-12 * max(1.0, float(np.abs(patch).max())) * math.sqrt(n):
        raise ZeroVarianceError("template patch has zero variance")
    num = signal.correlate(region, zp, mode="valid")
    s1 = _window_sums(region, ph, pw)
    s2 = _window_sums(region * region, ph, pw)
    var = np.maximum(s2 - s1 * s1 / n, 0.0)
    # cumsum cancellation error grows with the total energy of the region
    flat = var <= 1e-13 * max(1.0, float(s2.max()) if s2.size else 1.0, float((region * region).sum()))
    with np.errstate(invalid="ignore", divide="ignore"):
        score = num / (sp * np.sqrt(var))
    score[flat] = np.nan
    return np.clip(score, -1.0, 1.0)


def ncc_match(patch, region) -> tuple[tuple[int, int], float]:
    """Best placement (ox, oy) of ``patch`` within ``region`` and its ZNCC score.

    Ties go to the first placement in raster order.
    """
    score = ncc_surface(patch, region)
    if np.all(np.isnan(score)):
        raise ZeroVarianceError("search region has no textured placement")
    k = int(np.nanargmax(score))
    oy, ox = divmod(k, score.shape[1])
    return (ox, oy), float(score[oy, ox])


def grid_points(shape, spacing: int, margin: int) -> np.ndarray:
    h, w = shape
    xs = np.arange(margin, w - margin, spacing)
    ys = np.arange(margin, h - margin, spacing)
    gx, gy = np.meshgrid(xs, ys)
    return np.stack([gx.ravel(), gy.ravel()], axis=1)


def match_grid(src_img, dst_img, points, patch: int = 75, search: int = 10,
               predict: PolyprojectiveTransform | None = None, min_score: float = -1.0):
    """NCC-match a patch around each grid point of ``src_img`` into ``dst_img``.

    The search window is centred on the predicted location (the point itself
    without ``predict``) and extends ``search`` pixels each way. Returns the
    matched correspondences and the list of points that could not be matched
    (patch or window outside an image, flat patch, score below ``min_score``).
    """
    src_img = np.asarray(src_img, dtype=float)
    dst_img = np.asarray(dst_img, dtype=float)
    half = patch // 2
    src, dst, wts, unmatched = [], [], [], []
    for px, py in np.asarray(points, dtype=int).reshape(-1, 2).tolist():
        tpl = src_img[py - half:py - half + patch, px - half:px - half + patch] if py >= half and px >= half else None
        if tpl is None or tpl.shape != (patch, patch):
            unmatched.append((px, py))
            continue
        if predict is None:
            cx, cy = px, py
        else:
            try:
                fx, fy = predict.apply((px, py))
            except PoleError:
                unmatched.append((px, py))
                continue
            cx, cy = int(round(fx)), int(round(fy))
        x0, y0 = cx - half - search, cy - half - search
        size = patch + 2 * search
        if x0 < 0 or y0 < 0 or x0 + size > dst_img.shape[1] or y0 + size > dst_img.shape[0]:
            unmatched.append((px, py))
            continue
        try:
            (ox, oy), score = ncc_match(tpl, dst_img[y0:y0 + size, x0:x0 + size])
        except ZeroVarianceError:
            unmatched.append((px, py))
            continue
        if score < min_score:
            unmatched.append((px, py))
            continue
        src.append((px, py))
        dst.append((x0 + ox + half, y0 + oy + half))
        wts.append(1.0)
    return CorrespondenceSet(np.array(src, float).reshape(-1, 2), np.array(dst, float).reshape(-1, 2), wts), unmatched


# -- displacement field -------------------------------------------------------

CELL_SIZE = 200


def robust_mean(vectors, weights=None, drop_fraction: float = 0.05, target_mean_err: float = 1.0,
                max_rounds: int = 40):
    """Case deletion with a constant model: (vector, survivor indices, converged)."""
    v = np.asarray(vectors, dtype=float).reshape(-1, 2)
    w = np.ones(len(v)) if weights is None else np.asarray(weights, dtype=float)
    if len(v) == 0:
        raise ValueError("no vectors")
    alive = np.arange(len(v))
    for _ in range(max_rounds):
        est = np.average(v[alive], axis=0, weights=w[alive])
        res = np.hypot(*(v[alive] - est).T)
        if np.average(res, weights=w[alive]) < target_mean_err:
            return est, alive, True
        k = int(math.ceil(drop_fraction * len(alive) - 1e-12))
        if len(alive) - k < 1:
            return est, alive, False
        alive = np.delete(alive, np.argsort(-res, kind="stable")[:k])
    return np.average(v[alive], axis=0, weights=w[alive]), alive, False


@dataclass
class DisplacementField:
    """Per-cell displacement vectors; ``vectors[i, j]`` belongs to cell row i, column j."""

    vectors: np.ndarray          # (rows, cols, 2) as (dx, dy)
    cell: int = CELL_SIZE
    filled: np.ndarray | None = None      # True where a cell inherited a neighbour's vector
    converged: np.ndarray | None = None

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=float)
        rows, cols = self.vectors.shape[:2]
        if self.filled is None:
            self.filled = np.zeros((rows, cols), dtype=bool)
        if self.converged is None:
            self.converged = np.ones((rows, cols), dtype=bool)

    def centre(self, i: int, j: int) -> tuple[float, float]:
        return ((j + 0.5) * self.cell, (i + 0.5) * self.cell)

    def evaluate(self, pts) -> np.ndarray:
        """Bilinear interpolation between cell centres, clamped beyond the outer centres."""
        pts = np.asarray(pts, dtype=float).reshape(-1, 2)
        rows, cols = self.vectors.shape[:2]
        gx = np.clip(pts[:, 0] / self.cell - 0.5, 0, cols - 1)
        gy = np.clip(pts[:, 1] / self.cell - 0.5, 0, rows - 1)
        j0 = np.minimum(np.floor(gx).astype(int), max(cols - 2, 0))
        i0 = np.minimum(np.floor(gy).astype(int), max(rows - 2, 0))
        j1, i1 = np.minimum(j0 + 1, cols - 1), np.minimum(i0 + 1, rows - 1)
        fx, fy = (gx - j0)[:, None], (gy - i0)[:, None]
        V = self.vectors
        return ((1 - fy) * ((1 - fx) * V[i0, j0] + fx * V[i0, j1])
                + fy * ((1 - fx) * V[i1, j0] + fx * V[i1, j1]))


def build_displacement_field(corrs: CorrespondenceSet, shape, cell: int = CELL_SIZE,
                             drop_fraction: float = 0.05, target_mean_err: float = 1.0) -> DisplacementField:
    """Robust constant displacement per cell from matches binned by source position.

    Cells without matches take the vector of the nearest matched cell (by
    cell-index distance, lowest (row, col) on ties) and are flagged in ``filled``.
    """
    h, w = shape
    rows, cols = -(-h // cell), -(-w // cell)
    disp = corrs.dst - corrs.src
    ci = np.clip((corrs.src[:, 1] // cell).astype(int), 0, rows - 1)
    cj = np.clip((corrs.src[:, 0] // cell).astype(int), 0, cols - 1)
    V = np.zeros((rows, cols, 2))
    have = np.zeros((rows, cols), dtype=bool)
    conv = np.ones((rows, cols), dtype=bool)
    for i in range(rows):
        for j in range(cols):
            sel = (ci == i) & (cj == j)
            if sel.any():
                V[i, j], _, conv[i, j] = robust_mean(disp[sel], corrs.weights[sel], drop_fraction, target_mean_err)
                have[i, j] = True
    if not have.any():
        raise ValueError("no matched cells")
    mi, mj = np.nonzero(have)
    for i in range(rows):
        for j in range(cols):
            if not have[i, j]:
                k = int(np.argmin((mi - i) ** 2 + (mj - j) ** 2))
                V[i, j] = V[mi[k], mj[k]]
    return DisplacementField(V, cell, ~have, conv)


# -- files --------------------------------------------------------------------

def write_correspondences(path, corrs: CorrespondenceSet) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["sx", "sy", "tx", "ty", "w"])
        for (sx, sy), (tx, ty), w in zip(corrs.src.tolist(), corrs.dst.tolist(), corrs.weights.tolist()):
            out.writerow([repr(sx), repr(sy), repr(tx), repr(ty), repr(w)])


def read_correspondences(path) -> CorrespondenceSet:
    rows = []
    with open(path, newline="") as fh:
        for k, row in enumerate(csv.reader(fh)):
            if not row or row[0].strip().startswith("#"):
                continue
            if k == 0 and row[0].strip() == "sx":
                continue
            if len(row) not in (4, 5):
                raise ValueError(f"{path}: line {k + 1}: expected sx,sy,tx,ty[,w]")
            vals = [float(v) for v in row]
            rows.append(vals if len(vals) == 5 else vals + [1.0])
    a = np.array(rows, dtype=float).reshape(-1, 5)
    return CorrespondenceSet(a[:, 0:2], a[:, 2:4], a[:, 4])


def write_transform(path, T: PolyprojectiveTransform) -> None:
    """Three lines: P1 and P2 over [1 x y xx xy yy], then Q over [x y xx xy yy]."""
    p = T.array
    lines = [TRANSFORM_HEADER,
             " ".join(repr(v) for v in p[0:6].tolist()),
             " ".join(repr(v) for v in p[6:12].tolist()),
             " ".join(repr(v) for v in p[12:17].tolist())]
    Path(path).write_text("\n".join(lines) + "\n")


def read_transform(path) -> PolyprojectiveTransform:
    vals = []
    for line in Path(path).read_text().splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            vals += [float(t) for t in line.split()]
    if len(vals) != N_PARAMS:
        raise ValueError(f"{path}: expected {N_PARAMS} coefficients, found {len(vals)}")
    return PolyprojectiveTransform(vals)


def write_displacement_field(path, df: DisplacementField) -> None:
    with open(path, "w", newline="") as fh:
        out = csv.writer(fh)
        out.writerow(["cell_i", "cell_j", "dx", "dy"])
        rows, cols = df.vectors.shape[:2]
        for i in range(rows):
            for j in range(cols):
                out.writerow([i, j, repr(float(df.vectors[i, j, 0])), repr(float(df.vectors[i, j, 1]))])


def read_displacement_field(path, cell: int = CELL_SIZE) -> DisplacementField:
    with open(path, newline="") as fh:
        recs = [(int(r["cell_i"]), int(r["cell_j"]), float(r["dx"]), float(r["dy"])) for r in csv.DictReader(fh)]
    if not recs:
        raise ValueError(f"{path}: empty displacement field")
    rows = max(r[0] for r in recs) + 1
    cols = max(r[1] for r in recs) + 1
    V = np.full((rows, cols, 2), np.nan)
    for i, j, dx, dy in recs:
        V[i, j] = dx, dy
    if np.isnan(V).any():
        raise ValueError(f"{path}: missing cells")
    return DisplacementField(V, cell)
