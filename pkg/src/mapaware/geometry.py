"""Indoor map representation and geometric queries.

A map is a support region R (polygon with optional holes) plus an explicit
list of obstructing walls. Walls are zero-thickness segments; the outline of
R is never counted as an obstruction unless it is also listed as a wall.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np

from . import kernels


class MapError(ValueError):
    """Invalid map definition."""


class DegenerateMapError(RuntimeError):
    """Rejection sampling could not find a point inside the support."""


class Point2D(NamedTuple):
    x: float
    y: float


def _shoelace(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


@dataclass(frozen=True, eq=False)
class IndoorMap:
    """Support region, its bounding box and the obstructing wall segments.

    Parameters
    ----------
    support : array_like, shape (n, 2)
        Outer ring of R, metres. Closing vertex optional.
    walls : array_like, shape (W, 2, 2) or (W, 4)
        Wall segments, metres.
    holes : sequence of array_like
        Inner rings excluded from R.
    """

    support: np.ndarray
    walls: np.ndarray = field(default_factory=lambda: np.zeros((0, 4)))
    holes: tuple = ()

    def __post_init__(self):
        outer = _as_ring(self.support, "support")
        holes = tuple(_as_ring(h, f"holes[{k}]") for k, h in enumerate(self.holes))
        walls = np.asarray(self.walls, dtype=float)
        walls = np.zeros((0, 4)) if walls.size == 0 else walls.reshape(len(walls), -1)
        if walls.shape[1] != 4:
            raise MapError("walls must be a list of [[x1, y1], [x2, y2]] segments")
        if not np.isfinite(walls).all():
            bad = int(np.flatnonzero(~np.isfinite(walls).all(axis=1))[0])
            raise MapError(f"walls[{bad}] has non-finite coordinates")
        lengths = np.hypot(walls[:, 2] - walls[:, 0], walls[:, 3] - walls[:, 1])
        if (lengths <= 0).any():
            bad = int(np.flatnonzero(lengths <= 0)[0])
            raise MapError(f"walls[{bad}] has zero length")

        area = abs(_shoelace(outer)) - sum(abs(_shoelace(h)) for h in holes)
        if not area > 0:
            raise MapError(f"support area must be positive, got {area:g} m^2")

        bbox = (
            float(outer[:, 0].min()),
            float(outer[:, 1].min()),
            float(outer[:, 0].max()),
            float(outer[:, 1].max()),
        )
        for k, h in enumerate(holes):
            if (h[:, 0] < bbox[0]).any() or (h[:, 0] > bbox[2]).any() or (
                h[:, 1] < bbox[1]
            ).any() or (h[:, 1] > bbox[3]).any():
                raise MapError(f"holes[{k}] extends outside the support outline")
        ends = walls.reshape(-1, 2)
        tol = kernels.EPS
        outside = (
            (ends[:, 0] < bbox[0] - tol)
            | (ends[:, 0] > bbox[2] + tol)
            | (ends[:, 1] < bbox[1] - tol)
            | (ends[:, 1] > bbox[3] + tol)
        )
        if outside.any():
            bad = int(np.flatnonzero(outside)[0]) // 2
            raise MapError(f"walls[{bad}] lies outside the bounding box of the support")

        object.__setattr__(self, "support", outer)
        object.__setattr__(self, "holes", holes)
        object.__setattr__(self, "walls", np.ascontiguousarray(walls))
        object.__setattr__(self, "area", float(area))
        object.__setattr__(self, "bbox", bbox)
        object.__setattr__(self, "rings", (outer,) + holes)

    # area and bbox are set in __post_init__
    area: float = field(init=False, repr=False)
    bbox: tuple = field(init=False, repr=False)
    rings: tuple = field(init=False, repr=False)

    @property
    def n_walls(self) -> int:
        return len(self.walls)

    def contains_many(self, points) -> np.ndarray:
        """Vectorized membership test, boundary inclusive."""
        return kernels.points_in_region(points, self.rings)

    def obstruction_counts(self, points, anchors) -> np.ndarray:
        """Matrix of wall crossings between every point and every anchor."""
        return kernels.count_crossings(points, anchors, self.walls)

    def translated(self, dx: float, dy: float) -> "IndoorMap":
        shift = np.array([dx, dy])
        return IndoorMap(
            support=self.support + shift,
            walls=self.walls + np.tile(shift, 2),
            holes=tuple(h + shift for h in self.holes),
        )

    def to_dict(self) -> dict:
        doc = {
            "support": self.support.tolist(),
            "walls": self.walls.reshape(-1, 2, 2).tolist(),
        }
        if self.holes:
            doc["holes"] = [h.tolist() for h in self.holes]
        return doc


def _as_ring(ring, name: str) -> np.ndarray:
    arr = np.asarray(ring, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise MapError(f"{name} must be a list of [x, y] vertices")
    if len(arr) > 1 and np.array_equal(arr[0], arr[-1]):
        arr = arr[:-1]
    if len(arr) < 3:
        raise MapError(f"{name} needs at least 3 distinct vertices, got {len(arr)}")
    if not np.isfinite(arr).all():
        bad = int(np.flatnonzero(~np.isfinite(arr).all(axis=1))[0])
        raise MapError(f"{name}[{bad}] has non-finite coordinates")
    return np.ascontiguousarray(arr)


def rectangle(x0: float, y0: float, x1: float, y1: float) -> np.ndarray:
    """Counter-clockwise ring of an axis-aligned rectangle."""
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def load_map(path) -> IndoorMap:
    """Read a map JSON document (``support``, optional ``holes``, ``walls``)."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MapError(f"{path}: not valid JSON ({exc})") from exc
    return map_from_dict(doc)


def map_from_dict(doc: dict) -> IndoorMap:
    if not isinstance(doc, dict) or "support" not in doc:
        raise MapError("map document needs a 'support' ring")
    return IndoorMap(
        support=doc["support"],
        walls=doc.get("walls", []),
        holes=tuple(doc.get("holes", ())),
    )


def save_map(imap: IndoorMap, path) -> None:
    Path(path).write_text(json.dumps(imap.to_dict(), indent=2) + "\n")


def contains(imap: IndoorMap, p) -> bool:
    """True iff ``p`` lies in the support region (boundary included)."""
    return bool(imap.contains_many(np.asarray(p, dtype=float).reshape(1, 2))[0])


def count_obstructions(imap: IndoorMap, a, b) -> int:
    """Number of walls whose interior is strictly crossed by the open segment (a, b)."""
    counts = kernels.count_crossings(
        np.asarray(a, dtype=float).reshape(1, 2),
        np.asarray(b, dtype=float).reshape(1, 2),
        imap.walls,
    )
    return int(counts[0, 0])


def uniform_prior_density(imap: IndoorMap, p) -> float:
    return 1.0 / imap.area if contains(imap, p) else 0.0


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


def sample_uniform_many(imap: IndoorMap, n: int, rng_seed=None, max_attempts: int = 100_000) -> np.ndarray:
    """Draw ``n`` points uniformly over R by rejection from the bounding box."""
    rng = _rng(rng_seed)
    x0, y0, x1, y1 = imap.bbox
    out = np.empty((n, 2))
    filled = 0
    attempts = 0
    batch = max(16, 2 * n)
    while filled < n:
        if attempts >= max_attempts * max(n, 1):
            frac = imap.area / ((x1 - x0) * (y1 - y0))
            raise DegenerateMapError(
                f"no interior point after {attempts} draws (area ratio {frac:.3g})"
            )
        cand = np.column_stack((rng.uniform(x0, x1, batch), rng.uniform(y0, y1, batch)))
        attempts += batch
        keep = cand[imap.contains_many(cand)]
        take = min(len(keep), n - filled)
        out[filled:filled + take] = keep[:take]
        filled += take
    return out


def sample_uniform(imap: IndoorMap, rng_seed=None, max_attempts: int = 100_000) -> Point2D:
    """One uniform draw over R; deterministic for a fixed integer seed."""
    rng = _rng(rng_seed)
    x0, y0, x1, y1 = imap.bbox
    for _ in range(max_attempts):
        p = (rng.uniform(x0, x1), rng.uniform(y0, y1))
        if contains(imap, p):
            return Point2D(float(p[0]), float(p[1]))
    frac = imap.area / ((x1 - x0) * (y1 - y0))
    raise DegenerateMapError(
        f"no interior point after {max_attempts} draws (area ratio {frac:.3g})"
    )


def distance(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])
