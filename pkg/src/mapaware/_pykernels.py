"""Pure numpy implementation of the geometry kernels.

Mirrors ``mapaware._ckernels`` operation for operation so that both backends
return identical results; see ``mapaware.kernels`` for backend selection.
"""

import numpy as np

EPS = 1e-9

# bound on P*K*W elements materialized at once
_CHUNK_ELEMS = 1 << 20


def count_crossings(points, anchors, walls, eps=EPS):
    """Number of walls properly crossed by each point-anchor segment.

    Parameters
    ----------
    points : ndarray, shape (P, 2)
    anchors : ndarray, shape (K, 2)
    walls : ndarray, shape (W, 4)
        Rows ``x1, y1, x2, y2``.

    Returns
    -------
    ndarray of int32, shape (P, K)
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    anchors = np.ascontiguousarray(anchors, dtype=np.float64).reshape(-1, 2)
    walls = np.ascontiguousarray(walls, dtype=np.float64).reshape(-1, 4)
    n_p, n_k, n_w = len(points), len(anchors), len(walls)
    out = np.zeros((n_p, n_k), dtype=np.int32)
    if n_p == 0 or n_k == 0 or n_w == 0:
        return out

    w1x, w1y = walls[:, 0], walls[:, 1]
    wdx = walls[:, 2] - w1x
    wdy = walls[:, 3] - w1y
    wlen = np.hypot(wdx, wdy)

    step = max(1, _CHUNK_ELEMS // (n_k * n_w))
    bx = anchors[None, :, 0, None]
    by = anchors[None, :, 1, None]
    for start in range(0, n_p, step):
        blk = points[start:start + step]
        ax = blk[:, 0, None, None]
        ay = blk[:, 1, None, None]
        dx = bx - ax
        dy = by - ay
        length = np.hypot(dx, dy)
        with np.errstate(divide="ignore", invalid="ignore"):
            # signed distances of the wall endpoints from the query line
            d1 = (dx * (w1y - ay) - dy * (w1x - ax)) / length
            d2 = (dx * (w1y + wdy - ay) - dy * (w1x + wdx - ax)) / length
            # signed distances of the query endpoints from the wall line
            e1 = (wdx * (ay - w1y) - wdy * (ax - w1x)) / wlen
            e2 = (wdx * (by - w1y) - wdy * (bx - w1x)) / wlen
        hit = (((d1 > eps) & (d2 < -eps)) | ((d1 < -eps) & (d2 > eps))) & (
            ((e1 > eps) & (e2 < -eps)) | ((e1 < -eps) & (e2 > eps))
        )
        hit &= length > 0.0
        out[start:start + step] = hit.sum(axis=2, dtype=np.int32)
    return out


def _ring_mask(px, py, ring, eps):
    """Return (inside_or_on, on_boundary) for each point against one closed ring."""
    x1 = ring[:, 0]
    y1 = ring[:, 1]
    x2 = np.roll(x1, -1)
    y2 = np.roll(y1, -1)
    ex = x2 - x1
    ey = y2 - y1
    elen2 = ex * ex + ey * ey

    qx = px[:, None] - x1
    qy = py[:, None] - y1
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.clip((qx * ex + qy * ey) / elen2, 0.0, 1.0)
    t = np.where(elen2 > 0.0, t, 0.0)
    rx = qx - t * ex
    ry = qy - t * ey
    on = ((rx * rx + ry * ry) <= eps * eps).any(axis=1)

    pyc = py[:, None]
    straddle = (y1 > pyc) != (y2 > pyc)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = x1 + (pyc - y1) * ex / ey
    crossings = (straddle & (px[:, None] < xint)).sum(axis=1)
    inside = (crossings % 2) == 1
    return inside | on, on


def points_in_region(points, rings, eps=EPS):
    """Membership of points in a polygon with holes, boundaries inclusive.

    ``rings[0]`` is the outer boundary, the rest are holes.
    """
    points = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    px, py = points[:, 0], points[:, 1]
    result = np.empty(len(points), dtype=bool)
    step = max(1, _CHUNK_ELEMS // max(1, sum(len(r) for r in rings)))
    for start in range(0, len(points), step):
        sl = slice(start, start + step)
        inside, _ = _ring_mask(px[sl], py[sl], rings[0], eps)
        for hole in rings[1:]:
            in_hole, on_hole = _ring_mask(px[sl], py[sl], hole, eps)
            inside &= ~(in_hole & ~on_hole)
        result[sl] = inside
    return result
