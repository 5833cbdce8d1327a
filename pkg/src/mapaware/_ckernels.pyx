# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled geometry kernels.

Same arithmetic as ``mapaware._pykernels``, written as explicit loops.
"""

import numpy as np
cimport numpy as cnp
from libc.math cimport hypot

cnp.import_array()


def count_crossings(points, anchors, walls, double eps=1e-9):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] A = np.ascontiguousarray(anchors, dtype=np.float64).reshape(-1, 2)
    cdef const double[:, ::1] W = np.ascontiguousarray(walls, dtype=np.float64).reshape(-1, 4)
    cdef Py_ssize_t n_p = P.shape[0], n_k = A.shape[0], n_w = W.shape[0]
    out_arr = np.zeros((n_p, n_k), dtype=np.int32)
    if n_p == 0 or n_k == 0 or n_w == 0:
        return out_arr
    cdef int[:, ::1] out = out_arr

    wbuf = np.empty((n_w, 5), dtype=np.float64)
    cdef double[:, ::1] wb = wbuf
    cdef Py_ssize_t i, k, j
    for j in range(n_w):
        wb[j, 0] = W[j, 0]
        wb[j, 1] = W[j, 1]
        wb[j, 2] = W[j, 2] - W[j, 0]
        wb[j, 3] = W[j, 3] - W[j, 1]
        wb[j, 4] = hypot(wb[j, 2], wb[j, 3])

    cdef double ax, ay, bx, by, dx, dy, length
    cdef double w1x, w1y, wdx, wdy, wlen, d1, d2, e1, e2
    cdef int count
    with nogil:
        for i in range(n_p):
            ax = P[i, 0]
            ay = P[i, 1]
            for k in range(n_k):
                bx = A[k, 0]
                by = A[k, 1]
                dx = bx - ax
                dy = by - ay
                length = hypot(dx, dy)
                if not (length > 0.0):
                    continue
                count = 0
                for j in range(n_w):
                    w1x = wb[j, 0]
                    w1y = wb[j, 1]
                    wdx = wb[j, 2]
                    wdy = wb[j, 3]
                    wlen = wb[j, 4]
                    d1 = (dx * (w1y - ay) - dy * (w1x - ax)) / length
                    d2 = (dx * (w1y + wdy - ay) - dy * (w1x + wdx - ax)) / length
                    if not ((d1 > eps and d2 < -eps) or (d1 < -eps and d2 > eps)):
                        continue
                    e1 = (wdx * (ay - w1y) - wdy * (ax - w1x)) / wlen
                    e2 = (wdx * (by - w1y) - wdy * (bx - w1x)) / wlen
                    if (e1 > eps and e2 < -eps) or (e1 < -eps and e2 > eps):
                        count += 1
                out[i, k] = count
    return out_arr


cdef void _ring(const double[:, ::1] ring, double px, double py, double eps,
                bint* inside, bint* on) noexcept nogil:
    cdef Py_ssize_t n = ring.shape[0], j
    cdef double x1, y1, x2, y2, ex, ey, elen2, qx, qy, t, rx, ry, xint
    cdef int crossings = 0
    on[0] = False
    for j in range(n):
        x1 = ring[j, 0]
        y1 = ring[j, 1]
        x2 = ring[(j + 1) % n, 0]
        y2 = ring[(j + 1) % n, 1]
        ex = x2 - x1
        ey = y2 - y1
        elen2 = ex * ex + ey * ey
        qx = px - x1
        qy = py - y1
        if elen2 > 0.0:
            t = (qx * ex + qy * ey) / elen2
            if t < 0.0:
                t = 0.0
            elif t > 1.0:
                t = 1.0
        else:
            t = 0.0
        rx = qx - t * ex
        ry = qy - t * ey
        if rx * rx + ry * ry <= eps * eps:
            on[0] = True
        if (y1 > py) != (y2 > py):
            xint = x1 + (py - y1) * ex / ey
            if px < xint:
                crossings += 1
    inside[0] = (crossings % 2) == 1 or on[0]


def points_in_region(points, rings, double eps=1e-9):
    cdef const double[:, ::1] P = np.ascontiguousarray(points, dtype=np.float64).reshape(-1, 2)
    cdef Py_ssize_t n_p = P.shape[0], i, h
    result_arr = np.empty(n_p, dtype=np.uint8)
    cdef unsigned char[::1] result = result_arr
    ring_views = [np.ascontiguousarray(r, dtype=np.float64) for r in rings]
    cdef const double[:, ::1] outer = ring_views[0]
    cdef const double[:, ::1] hole
    cdef bint inside, on, in_hole, on_hole
    for i in range(n_p):
        _ring(outer, P[i, 0], P[i, 1], eps, &inside, &on)
        result[i] = inside
    for h in range(1, len(ring_views)):
        hole = ring_views[h]
        for i in range(n_p):
            if result[i]:
                _ring(hole, P[i, 0], P[i, 1], eps, &in_hole, &on_hole)
                if in_hole and not on_hole:
                    result[i] = 0
    return result_arr.astype(bool)
