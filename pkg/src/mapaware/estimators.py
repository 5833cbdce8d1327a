"""Position estimators: map-aware MAP-style estimator and map-unaware MLE.

Both maximize a log-likelihood over a constrained, non-convex search region.
The region's bounding box is split into sub-rectangles; each one contributes
seeded multistart points, and every start is refined by a feasible pattern
search (compass directions plus a finite-difference gradient probe). All
starts advance in lockstep so the likelihood is always evaluated in batches.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .geometry import IndoorMap, Point2D
from .models import (
    ModelParams,
    ObservationSet,
    Technology,
    anchor_positions,
    gaussian_logpdf,
    map_aware_terms,
    map_unaware_loglik_batch,
)
from .scenario import region_mask

MAP_AWARE = "map-aware"
MAP_UNAWARE = "map-unaware"
MODES = (MAP_AWARE, MAP_UNAWARE)

_SAMPLE_CHUNK = 64
_DIRECTIONS = np.array(
    [[1, 0], [-1, 0], [0, 1], [0, -1], [1, 1], [1, -1], [-1, 1], [-1, -1]], dtype=float
)
_DIRECTIONS[4:] /= math.sqrt(2.0)


class EstimatorError(ValueError):
    """Invalid estimator input."""


class EmptyObservationsError(EstimatorError):
    """No observation to localize from."""


class NoSolutionError(RuntimeError):
    """The search region has no feasible point."""


@dataclass(frozen=True)
class EstimatorConfig:
    """Multistart pattern-search settings.

    ``gradient_step`` is the finite-difference offset of the gradient probe,
    ``initial_step`` the first pattern size and ``tolerance`` the pattern size
    at which a start is considered converged.
    """

    subrect_max_side: float = 10.0
    local_iters_cap: int = 200
    gradient_step: float = 1e-4
    tolerance: float = 1e-6
    multistart_starts_per_rect: int = 4
    initial_step: float = 1.0
    start_pool: int = 64
    anchor_start_radius: float = 0.1
    edge_snap: float = 1e-3
    slide_step: float = 0.1
    max_sampling_chunks: int = 16
    seed: int = 0

    def __post_init__(self):
        if not self.subrect_max_side > 0:
            raise EstimatorError("subrect_max_side must be > 0")
        if not self.tolerance > 0:
            raise EstimatorError("tolerance must be > 0")
        if not self.gradient_step > 0:
            raise EstimatorError("gradient_step must be > 0")
        if not self.initial_step > 0:
            raise EstimatorError("initial_step must be > 0")
        if self.local_iters_cap < 1 or self.multistart_starts_per_rect < 1:
            raise EstimatorError("local_iters_cap and multistart_starts_per_rect must be >= 1")
        if self.start_pool < 1:
            raise EstimatorError("start_pool must be >= 1")
        if self.max_sampling_chunks < 1:
            raise EstimatorError("max_sampling_chunks must be >= 1")


@dataclass(frozen=True)
class EstimateResult:
    p_hat: Point2D
    log_value: float
    n_likelihood_evals: int
    n_intersection_tests: int
    converged: bool
    n_starts: int = 0


class _Problem:
    """Objective and feasibility test for one estimation task, with counters."""

    def __init__(self, imap, params, anchors, obs, mode, soften=True):
        if mode not in MODES:
            raise EstimatorError(f"mode must be one of {MODES}, got {mode!r}")
        if obs is None or len(obs) == 0:
            raise EmptyObservationsError("observation set is empty")
        amap = anchors if isinstance(anchors, dict) else {a.id: a for a in anchors}
        ids = obs.anchor_ids
        try:
            self.anchor_xy = anchor_positions(amap, ids)
        except KeyError as exc:
            raise EstimatorError(str(exc.args[0])) from None
        self.d_max = np.array([amap[i].d_max for i in ids], dtype=float)
        self.imap = imap
        self.params = params
        self.z = obs.z
        self.nlos = obs.nlos_mask
        self.map_aware = mode == MAP_AWARE
        self.soften = soften
        # Zero noise makes every LOS link degenerate whatever the bias spread.
        self.noiseless = params.noise_for(self.map_aware).sigma_n0 == 0
        self.n_evals = 0
        self.n_tests = 0

    def feasible(self, points):
        return region_mask(self.imap, self.anchor_xy, self.d_max, points, self.map_aware)

    def bbox(self):
        """Bounding box of the search region: B(R) clipped by the coverage discs."""
        x0, y0, x1, y1 = self.imap.bbox
        finite = np.isfinite(self.d_max)
        if finite.any():
            a, r = self.anchor_xy[finite], self.d_max[finite][:, None]
            lo = (a - r).max(axis=0)
            hi = (a + r).min(axis=0)
            x0, y0 = max(x0, lo[0]), max(y0, lo[1])
            x1, y1 = min(x1, hi[0]), min(y1, hi[1])
        return x0, y0, x1, y1

    def values(self, points):
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        self.n_evals += len(points)
        if self.map_aware:
            counts = self.imap.obstruction_counts(points, self.anchor_xy)
            self.n_tests += len(points) * len(self.anchor_xy) * self.imap.n_walls
            diff = points[:, None, :] - self.anchor_xy[None, :, :]
            d = np.hypot(diff[..., 0], diff[..., 1])
            mean, var = map_aware_terms(self.params, d, counts, self.z)
            return _gaussian_terms(self.z, mean, var, self.noiseless)
        if self.noiseless:
            return self._unaware_noiseless(points)
        return map_unaware_loglik_batch(
            self.params, points, self.anchor_xy, self.z, self.nlos, soften=self.soften, strict=False
        )

    def _unaware_noiseless(self, points):
        # Zero-variance Gaussian links fall back to a squared-residual score;
        # TOA exponential links keep their (non-degenerate) density.
        diff = points[:, None, :] - self.anchor_xy[None, :, :]
        d = np.hypot(diff[..., 0], diff[..., 1])
        unaware = self.params.map_unaware
        if self.params.technology is Technology.RSS:
            mean = d + np.where(self.nlos, unaware.kappa_b, 0.0)
            return -0.5 * ((self.z - mean) ** 2).sum(axis=1)
        los = ~self.nlos
        total = -0.5 * ((self.z[los] - d[:, los]) ** 2).sum(axis=1)
        if self.nlos.any():
            total = total + map_unaware_loglik_batch(
                self.params, points, self.anchor_xy[self.nlos], self.z[self.nlos],
                np.ones(int(self.nlos.sum()), dtype=bool), soften=self.soften, strict=False,
            )
        return total


def _gaussian_terms(z, mean, var, noiseless):
    zero = var <= 0
    if noiseless:
        # Degenerate limit: maximizing the likelihood is least squares.
        return -0.5 * ((z - mean) ** 2).sum(axis=1)
    safe = np.where(zero, 1.0, var)
    terms = np.where(zero, -np.inf, gaussian_logpdf(z, mean, safe))
    return terms.sum(axis=1)


def subrectangles(bbox, max_side: float):
    """Split ``bbox`` into equal sub-rectangles whose sides do not exceed ``max_side``."""
    x0, y0, x1, y1 = bbox
    nx = max(1, math.ceil((x1 - x0) / max_side - 1e-12))
    ny = max(1, math.ceil((y1 - y0) / max_side - 1e-12))
    xs = np.linspace(x0, x1, nx + 1)
    ys = np.linspace(y0, y1, ny + 1)
    return [(xs[i], ys[j], xs[i + 1], ys[j + 1]) for i in range(nx) for j in range(ny)]


def _starts_in(problem: _Problem, rect, k: int, cfg: EstimatorConfig, rect_idx: int):
    """The ``k`` best points of a fixed pool of seeded feasible draws in ``rect``.

    The pool (up to ``cfg.start_pool`` feasible points, drawn in fixed-size
    chunks from the rectangle's own stream) does not depend on ``k``, so
    asking for more starts only adds starts: the first ``k`` never change.
    """
    rng = np.random.default_rng([cfg.seed, rect_idx])
    x0, y0, x1, y1 = rect
    found = []
    n_found = 0
    for _ in range(cfg.max_sampling_chunks):
        cand = np.column_stack(
            (rng.uniform(x0, x1, _SAMPLE_CHUNK), rng.uniform(y0, y1, _SAMPLE_CHUNK))
        )
        keep = cand[problem.feasible(cand)]
        found.append(keep)
        n_found += len(keep)
        if n_found >= cfg.start_pool:
            break
    pool = np.concatenate(found)[: cfg.start_pool] if found else np.zeros((0, 2))
    if len(pool) <= k:
        return pool
    vals = problem.values(pool)
    order = np.argsort(-vals, kind="stable")
    return pool[order[:k]]


def _anchor_starts(problem: _Problem, cfg: EstimatorConfig):
    """Feasible points on a small circle around every anchor.

    The noise spread shrinks towards each anchor, which can create narrow
    likelihood peaks there that random starts easily miss.
    """
    ring = cfg.anchor_start_radius * _DIRECTIONS
    pts = (problem.anchor_xy[:, None, :] + ring[None]).reshape(-1, 2)
    return pts[problem.feasible(pts)]


def _pattern_search(problem: _Problem, starts: np.ndarray, cfg: EstimatorConfig):
    """Lockstep feasible ascent from every start.

    Each iteration probes the eight compass points at the current pattern
    size plus one step along a forward-difference gradient. The best
    improving probe is taken; otherwise the pattern size is halved.
    Infeasible probes are rejected, so iterates stay in the region and the
    objective never decreases.
    """
    x = starts.copy()
    f = problem.values(x)
    h = np.full(len(x), cfg.initial_step)
    g = cfg.gradient_step
    for _ in range(cfg.local_iters_cap):
        active = h >= cfg.tolerance
        if not active.any():
            break
        idx = np.flatnonzero(active)
        xa, fa, ha = x[idx], f[idx], h[idx]
        n = len(idx)

        fd = xa[:, None, :] + g * np.eye(2)[None]
        fd_vals = _feasible_values(problem, fd.reshape(-1, 2)).reshape(n, 2)
        with np.errstate(invalid="ignore"):
            grad = (fd_vals - fa[:, None]) / g
        grad = np.where(np.isfinite(grad), grad, 0.0)
        norm = np.hypot(grad[:, 0], grad[:, 1])
        gdir = np.where(norm[:, None] > 0, grad / np.where(norm > 0, norm, 1.0)[:, None], 0.0)

        dirs = np.concatenate((np.broadcast_to(_DIRECTIONS, (n, 8, 2)), gdir[:, None, :]), axis=1)
        probes = xa[:, None, :] + ha[:, None, None] * dirs
        vals = _feasible_values(problem, probes.reshape(-1, 2)).reshape(n, 9)
        vals[norm == 0, 8] = -np.inf
        best = np.argmax(vals, axis=1)
        fbest = vals[np.arange(n), best]
        better = fbest > fa
        x[idx[better]] = probes[np.flatnonzero(better), best[better]]
        f[idx[better]] = fbest[better]
        h[idx[~better]] = ha[~better] * 0.5
    return x, f, h < cfg.tolerance


def _discontinuity_lines(problem: _Problem):
    """Lines carrying the jumps of the map-aware likelihood.

    Obstruction counts change only when the trial point crosses a wall or a
    shadow ray (the ray from an anchor through a wall endpoint). Returned as
    (origin, unit direction) arrays.
    """
    walls = problem.imap.walls
    if len(walls) == 0:
        return np.zeros((0, 2)), np.zeros((0, 2))
    origins = [walls[:, :2]]
    dirs = [walls[:, 2:] - walls[:, :2]]
    ends = walls.reshape(-1, 2)
    for a in problem.anchor_xy:
        v = ends - a
        keep = np.hypot(v[:, 0], v[:, 1]) > 0
        origins.append(ends[keep])
        dirs.append(v[keep])
    o = np.concatenate(origins)
    u = np.concatenate(dirs)
    u = u / np.hypot(u[:, 0], u[:, 1])[:, None]
    return o, u


def _slide_along_edges(problem: _Problem, x, f, cfg: EstimatorConfig):
    """Polish points that stalled next to a likelihood jump.

    A point within ``cfg.edge_snap`` of a discontinuity line is projected
    onto it (kept only if feasible and not worse) and then refined by a 1-D
    pattern search along the line. Moves are accepted only on improvement.
    """
    o, u = _discontinuity_lines(problem)
    if len(o) == 0:
        return x, f
    rel = x[:, None, :] - o[None, :, :]
    s = (rel * u[None]).sum(axis=2)
    proj = o[None] + s[..., None] * u[None]
    near = np.hypot(*(x[:, None, :] - proj).transpose(2, 0, 1)) <= cfg.edge_snap
    pi, li = np.nonzero(near)
    if len(pi) == 0:
        return x, f
    pos = proj[pi, li]
    val = _feasible_values(problem, pos)
    ok = val >= f[pi]
    pi, li, pos, val, t = pi[ok], li[ok], pos[ok], val[ok], s[pi[ok], li[ok]]
    if len(pi) == 0:
        return x, f
    h = np.full(len(pi), cfg.slide_step)
    for _ in range(cfg.local_iters_cap):
        act = np.flatnonzero(h >= cfg.tolerance)
        if len(act) == 0:
            break
        cand_t = t[act, None] + h[act, None] * np.array([1.0, -1.0])
        cand = o[li[act], None, :] + cand_t[..., None] * u[li[act], None, :]
        cv = _feasible_values(problem, cand.reshape(-1, 2)).reshape(-1, 2)
        best = np.argmax(cv, axis=1)
        fb = cv[np.arange(len(act)), best]
        up = fb > val[act]
        moved = act[up]
        t[moved] = cand_t[up, best[up]]
        pos[moved] = cand[up, best[up]]
        val[moved] = fb[up]
        h[act[~up]] *= 0.5
    x, f = x.copy(), f.copy()
    for k in np.argsort(-val, kind="stable"):
        if val[k] > f[pi[k]]:
            x[pi[k]], f[pi[k]] = pos[k], val[k]
    return x, f


def _feasible_values(problem: _Problem, pts: np.ndarray) -> np.ndarray:
    out = np.full(len(pts), -np.inf)
    ok = problem.feasible(pts)
    if ok.any():
        out[ok] = problem.values(pts[ok])
    return out


def _estimate(problem: _Problem, cfg: EstimatorConfig) -> EstimateResult:
    x0, y0, x1, y1 = bbox = problem.bbox()
    if not (x1 >= x0 and y1 >= y0):
        raise NoSolutionError(
            f"coverage discs do not overlap the map bounding box (clipped box {bbox})"
        )
    rects = subrectangles(bbox, cfg.subrect_max_side)
    starts = [
        _starts_in(problem, r, cfg.multistart_starts_per_rect, cfg, k) for k, r in enumerate(rects)
    ]
    starts.append(_anchor_starts(problem, cfg))
    starts = np.concatenate(starts)
    if len(starts) == 0:
        raise NoSolutionError(
            f"no feasible point found in {len(rects)} sub-rectangle(s) of {bbox} "
            f"after {cfg.max_sampling_chunks * _SAMPLE_CHUNK} draws each"
        )
    x, f, conv = _pattern_search(problem, starts, cfg)
    if problem.map_aware:
        x, f = _slide_along_edges(problem, x, f, cfg)
    best_val = np.max(f)
    tied = np.flatnonzero(f == best_val)
    order = np.lexsort((x[tied, 1], x[tied, 0]))
    win = tied[order[0]]
    return EstimateResult(
        p_hat=Point2D(float(x[win, 0]), float(x[win, 1])),
        log_value=float(best_val),
        n_likelihood_evals=problem.n_evals,
        n_intersection_tests=problem.n_tests,
        converged=bool(conv[win]) and bool(np.isfinite(best_val)),
        n_starts=len(starts),
    )


def estimate_mapbe(imap: IndoorMap, params: ModelParams, anchors, obs: ObservationSet,
                   cfg: EstimatorConfig | None = None) -> EstimateResult:
    """Maximize the map-aware log-likelihood over the map support within anchor coverage."""
    problem = _Problem(imap, params, anchors, obs, MAP_AWARE)
    return _estimate(problem, cfg or EstimatorConfig())


def estimate_mle(imap: IndoorMap, params: ModelParams, anchors, obs: ObservationSet,
                 cfg: EstimatorConfig | None = None) -> EstimateResult:
    """Maximize the detector-labelled (map-unaware) log-likelihood over the bounding box.

    TOA exponential terms are replaced by the softened mixture density so the
    objective stays finite when a range falls short of the trial distance.
    """
    problem = _Problem(imap, params, anchors, obs, MAP_UNAWARE, soften=True)
    return _estimate(problem, cfg or EstimatorConfig())


@dataclass(frozen=True)
class LikelihoodGrid:
    """Log-likelihood raster; ``values[j, i]`` is at ``(x[i], y[j])``, NaN where absent."""

    x: np.ndarray
    y: np.ndarray
    values: np.ndarray
    mode: str

    @property
    def present(self) -> np.ndarray:
        return ~np.isnan(self.values)

    def argmax(self):
        flat = np.where(self.present, self.values, -np.inf)
        if not np.isfinite(flat).any() and not self.present.any():
            raise NoSolutionError("grid has no cell inside the search region")
        j, i = np.unravel_index(np.argmax(flat), flat.shape)
        return Point2D(float(self.x[i]), float(self.y[j])), float(flat[j, i])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["x_m", "y_m", "log_likelihood"])
            for j, yv in enumerate(self.y):
                for i, xv in enumerate(self.x):
                    v = self.values[j, i]
                    if not np.isnan(v):
                        w.writerow([repr(float(xv)), repr(float(yv)), repr(float(v))])


def likelihood_grid(imap: IndoorMap, params: ModelParams, anchors, obs: ObservationSet,
                    mode: str = MAP_AWARE, resolution: float = 0.1, soften: bool = True) -> LikelihoodGrid:
    """Evaluate the log-likelihood at cell centres of a raster over B(R).

    Cells outside the mode's search region are NaN. ``soften`` selects the
    mixture density for map-unaware TOA NLOS terms, matching ``estimate_mle``.
    """
    if not resolution > 0:
        raise EstimatorError("resolution must be > 0")
    problem = _Problem(imap, params, anchors, obs, mode, soften=soften)
    x0, y0, x1, y1 = imap.bbox
    nx = max(1, math.ceil((x1 - x0) / resolution - 1e-9))
    ny = max(1, math.ceil((y1 - y0) / resolution - 1e-9))
    xs = x0 + (np.arange(nx) + 0.5) * resolution
    ys = y0 + (np.arange(ny) + 0.5) * resolution
    xs = np.minimum(xs, x1)
    ys = np.minimum(ys, y1)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack((gx.ravel(), gy.ravel()))
    ok = problem.feasible(pts)
    vals = np.full(len(pts), np.nan)
    if ok.any():
        vals[ok] = problem.values(pts[ok])
    return LikelihoodGrid(xs, ys, vals.reshape(ny, nx), mode)


def write_result_json(result: EstimateResult, path, extra: dict | None = None) -> None:
    doc = {
        "x_m": result.p_hat.x,
        "y_m": result.p_hat.y,
        "log_value": result.log_value,
        "n_likelihood_evals": result.n_likelihood_evals,
        "n_intersection_tests": result.n_intersection_tests,
        "converged": result.converged,
        "n_starts": result.n_starts,
    }
    if extra:
        doc.update(extra)
    Path(path).write_text(json.dumps(doc, indent=2) + "\n")
