"""Capsule and plane primitives: distances, ray intersections, a uniform-grid index.

Two implementations live here on purpose.  The numpy functions are vectorised
over primitive arrays and back the public scene queries; the ``nb_*`` kernels
are scalar numba code used by the renderer and the planner's collision
checker.  Tests pin them against each other.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numba as nb
import numpy as np

EPS = 1e-12
TINY = 1e-30  # squared length below which a segment is a point


# ----------------------------------------------------------------- numpy side


def segment_distance(p1, q1, p2, q2):
    """Closest distance between segments p1-q1 and p2-q2 (broadcast over rows).

    Returns ``(dist, c1, c2)`` with the closest points on each segment.
    """
    p1, q1, p2, q2 = (np.asarray(x, dtype=float) for x in (p1, q1, p2, q2))
    p1, q1, p2, q2 = np.broadcast_arrays(p1, q1, p2, q2)
    d1 = q1 - p1
    d2 = q2 - p2
    r = p1 - p2
    a = np.einsum("...i,...i", d1, d1)
    e = np.einsum("...i,...i", d2, d2)
    f = np.einsum("...i,...i", d2, r)
    c = np.einsum("...i,...i", d1, r)
    b = np.einsum("...i,...i", d1, d2)
    denom = a * e - b * b
    a_ok = a > TINY
    e_ok = e > TINY
    skew = denom > EPS * a * e
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(skew, np.clip((b * f - c * e) / np.where(skew, denom, 1.0), 0.0, 1.0), 0.0)
        t = np.where(e_ok, (b * s + f) / np.where(e_ok, e, 1.0), 0.0)
        s_lo = np.clip(-c / np.where(a_ok, a, 1.0), 0.0, 1.0)
        s_hi = np.clip((b - c) / np.where(a_ok, a, 1.0), 0.0, 1.0)
    s = np.where(t < 0.0, s_lo, np.where(t > 1.0, s_hi, s))
    t = np.clip(t, 0.0, 1.0)
    # degenerate segments
    t = np.where(~a_ok & e_ok, np.clip(f / np.where(e_ok, e, 1.0), 0.0, 1.0), t)
    s = np.where(~a_ok, 0.0, s)
    s = np.where(a_ok & ~e_ok, s_lo, s)
    t = np.where(~e_ok, 0.0, t)
    c1 = p1 + d1 * s[..., None]
    c2 = p2 + d2 * t[..., None]
    return np.linalg.norm(c1 - c2, axis=-1), c1, c2


def point_segment_distance(p, a, b):
    p, a, b = (np.asarray(x, dtype=float) for x in (p, a, b))
    ab = b - a
    den = np.einsum("...i,...i", ab, ab)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = np.where(den > TINY, np.einsum("...i,...i", p - a, ab) / np.where(den > TINY, den, 1.0), 0.0)
    t = np.clip(t, 0.0, 1.0)
    c = a + ab * t[..., None]
    return np.linalg.norm(p - c, axis=-1), c


def ray_capsules(origin, direction, a, b, r):
    """Entry distance of a unit ray into each capsule (``inf`` on a miss).

    Capsules that contain the ray origin are not hit (only front faces count).
    """
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    a = np.atleast_2d(np.asarray(a, dtype=float))
    b = np.atleast_2d(np.asarray(b, dtype=float))
    r = np.atleast_1d(np.asarray(r, dtype=float))
    n = len(a)
    best = np.full(n, np.inf)
    ba = b - a
    oa = o - a
    baba = np.einsum("ij,ij->i", ba, ba)
    bard = ba @ d
    baoa = np.einsum("ij,ij->i", ba, oa)
    rdoa = oa @ d
    oaoa = np.einsum("ij,ij->i", oa, oa)
    A = baba - bard * bard
    body = A > 1e-12 * np.maximum(baba, EPS)
    B = baba * rdoa - baoa * bard
    C = baba * oaoa - baoa * baoa - r * r * baba
    h = B * B - A * C
    ok = body & (h >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = (-B - np.sqrt(np.where(ok, h, 0.0))) / np.where(ok, A, 1.0)
    y = baoa + t * bard
    ok &= (t >= 0) & (y > 0) & (y < baba)
    best = np.where(ok, t, best)
    for c in (a, b):
        oc = o - c
        Bs = oc @ d
        Cs = np.einsum("ij,ij->i", oc, oc) - r * r
        hs = Bs * Bs - Cs
        oks = (hs >= 0) & (Cs > 0)
        ts = -Bs - np.sqrt(np.where(oks, hs, 0.0))
        oks &= ts >= 0
        best = np.where(oks & (ts < best), ts, best)
    inside, _ = point_segment_distance(o, a, b)
    best = np.where(inside < r, np.inf, best)
    return best


def ray_planes(origin, direction, points, normals):
    """Distance along a unit ray to each solid half-space (front face only)."""
    o = np.asarray(origin, dtype=float)
    d = np.asarray(direction, dtype=float)
    points = np.atleast_2d(points)
    normals = np.atleast_2d(normals)
    dn = normals @ d
    side = np.einsum("ij,ij->i", o - points, normals)
    with np.errstate(divide="ignore", invalid="ignore"):
        t = -side / dn
    ok = (dn < 0) & (side >= 0) & (t >= 0)
    return np.where(ok, t, np.inf)


def capsule_plane_penetration(a, b, r, point, normal):
    """Positive when a capsule dips below a plane's surface."""
    a = np.atleast_2d(a)
    b = np.atleast_2d(b)
    da = (a - point) @ normal
    db = (b - point) @ normal
    return np.asarray(r) - np.minimum(da, db)


# ------------------------------------------------------------------ uniform grid


@dataclass(frozen=True, eq=False)
class SpatialGrid:
    """Dense uniform grid over capsule bounding boxes (CSR cell lists)."""

    origin: np.ndarray
    cell: float
    dims: np.ndarray
    cell_start: np.ndarray
    items: np.ndarray

    @classmethod
    def build(cls, a: np.ndarray, b: np.ndarray, r: np.ndarray, cell: float = 0.1, max_cells: int = 2_000_000):
        a = np.asarray(a, dtype=float).reshape(-1, 3)
        b = np.asarray(b, dtype=float).reshape(-1, 3)
        r = np.asarray(r, dtype=float).reshape(-1)
        if len(a) == 0:
            return cls(np.zeros(3), float(cell), np.ones(3, dtype=np.int64), np.zeros(2, dtype=np.int64),
                       np.zeros(0, dtype=np.int64))
        lo = np.minimum(a, b) - r[:, None]
        hi = np.maximum(a, b) + r[:, None]
        origin = lo.min(axis=0)
        extent = hi.max(axis=0) - origin
        cell = float(cell)
        dims = np.maximum(np.ceil(extent / cell).astype(np.int64), 1)
        while np.prod(dims) > max_cells:
            cell *= 1.5
            dims = np.maximum(np.ceil(extent / cell).astype(np.int64), 1)
        cell_start, items = _nb_grid_fill(lo, hi, origin, cell, dims)
        return cls(origin, cell, dims, cell_start, items)

    def cell_range(self, lo, hi):
        i0 = np.clip(np.floor((np.asarray(lo) - self.origin) / self.cell).astype(np.int64), 0, self.dims - 1)
        i1 = np.clip(np.floor((np.asarray(hi) - self.origin) / self.cell).astype(np.int64), 0, self.dims - 1)
        return i0, i1

    def candidates(self, lo, hi) -> np.ndarray:
        """Ids of capsules whose cells overlap the box [lo, hi] (sorted, unique)."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        top = self.origin + self.dims * self.cell
        if np.any(hi < self.origin) or np.any(lo > top):
            return np.zeros(0, dtype=np.int64)
        i0, i1 = self.cell_range(lo, hi)
        ix, iy, iz = np.meshgrid(
            np.arange(i0[0], i1[0] + 1), np.arange(i0[1], i1[1] + 1), np.arange(i0[2], i1[2] + 1), indexing="ij"
        )
        flat = ((ix * self.dims[1] + iy) * self.dims[2] + iz).ravel()
        starts = self.cell_start[flat]
        ends = self.cell_start[flat + 1]
        if len(flat) == 0 or (ends - starts).sum() == 0:
            return np.zeros(0, dtype=np.int64)
        chunks = [self.items[s:e] for s, e in zip(starts, ends) if e > s]
        return np.unique(np.concatenate(chunks))


@nb.njit(cache=True)
def _cell_bounds(lo, hi, origin, cell, dims, i):
    i0 = np.empty(3, dtype=np.int64)
    i1 = np.empty(3, dtype=np.int64)
    for k in range(3):
        i0[k] = min(max(int(math.floor((lo[i, k] - origin[k]) / cell)), 0), dims[k] - 1)
        i1[k] = min(max(int(math.floor((hi[i, k] - origin[k]) / cell)), 0), dims[k] - 1)
    return i0, i1


@nb.njit(cache=True)
def _nb_grid_fill(lo, hi, origin, cell, dims):
    n = lo.shape[0]
    ncell = dims[0] * dims[1] * dims[2]
    start = np.zeros(ncell + 1, dtype=np.int64)
    for i in range(n):
        i0, i1 = _cell_bounds(lo, hi, origin, cell, dims, i)
        for x in range(i0[0], i1[0] + 1):
            for y in range(i0[1], i1[1] + 1):
                for z in range(i0[2], i1[2] + 1):
                    start[(x * dims[1] + y) * dims[2] + z + 1] += 1
    for c in range(ncell):
        start[c + 1] += start[c]
    items = np.empty(start[ncell], dtype=np.int64)
    fill = start[:-1].copy()
    for i in range(n):
        i0, i1 = _cell_bounds(lo, hi, origin, cell, dims, i)
        for x in range(i0[0], i1[0] + 1):
            for y in range(i0[1], i1[1] + 1):
                for z in range(i0[2], i1[2] + 1):
                    c = (x * dims[1] + y) * dims[2] + z
                    items[fill[c]] = i
                    fill[c] += 1
    return start, items


# ------------------------------------------------------------------ numba side


@nb.njit(cache=True, inline="always")
def _dot(ax, ay, az, bx, by, bz):
    return ax * bx + ay * by + az * bz


@nb.njit(cache=True)
def nb_segment_distance(p1, q1, p2, q2):
    d1x, d1y, d1z = q1[0] - p1[0], q1[1] - p1[1], q1[2] - p1[2]
    d2x, d2y, d2z = q2[0] - p2[0], q2[1] - p2[1], q2[2] - p2[2]
    rx, ry, rz = p1[0] - p2[0], p1[1] - p2[1], p1[2] - p2[2]
    a = _dot(d1x, d1y, d1z, d1x, d1y, d1z)
    e = _dot(d2x, d2y, d2z, d2x, d2y, d2z)
    f = _dot(d2x, d2y, d2z, rx, ry, rz)
    if a <= TINY and e <= TINY:
        s = 0.0
        t = 0.0
    elif a <= TINY:
        s = 0.0
        t = min(max(f / e, 0.0), 1.0)
    else:
        c = _dot(d1x, d1y, d1z, rx, ry, rz)
        if e <= TINY:
            t = 0.0
            s = min(max(-c / a, 0.0), 1.0)
        else:
            b = _dot(d1x, d1y, d1z, d2x, d2y, d2z)
            denom = a * e - b * b
            if denom > EPS * a * e:
                s = min(max((b * f - c * e) / denom, 0.0), 1.0)
            else:
                s = 0.0
            t = (b * s + f) / e
            if t < 0.0:
                t = 0.0
                s = min(max(-c / a, 0.0), 1.0)
            elif t > 1.0:
                t = 1.0
                s = min(max((b - c) / a, 0.0), 1.0)
    dx = rx + d1x * s - d2x * t
    dy = ry + d1y * s - d2y * t
    dz = rz + d1z * s - d2z * t
    return math.sqrt(dx * dx + dy * dy + dz * dz)


@nb.njit(cache=True)
def nb_ray_capsule(ox, oy, oz, dx, dy, dz, a, b, r):
    bax, bay, baz = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    oax, oay, oaz = ox - a[0], oy - a[1], oz - a[2]
    baba = _dot(bax, bay, baz, bax, bay, baz)
    # origin inside: ignore
    if baba > TINY:
        tt = min(max(_dot(oax, oay, oaz, bax, bay, baz) / baba, 0.0), 1.0)
    else:
        tt = 0.0
    px, py, pz = oax - bax * tt, oay - bay * tt, oaz - baz * tt
    if px * px + py * py + pz * pz < r * r:
        return np.inf
    best = np.inf
    bard = _dot(bax, bay, baz, dx, dy, dz)
    baoa = _dot(bax, bay, baz, oax, oay, oaz)
    A = baba - bard * bard
    if A > 1e-12 * max(baba, EPS):
        rdoa = _dot(dx, dy, dz, oax, oay, oaz)
        oaoa = _dot(oax, oay, oaz, oax, oay, oaz)
        B = baba * rdoa - baoa * bard
        C = baba * oaoa - baoa * baoa - r * r * baba
        h = B * B - A * C
        if h >= 0:
            t = (-B - math.sqrt(h)) / A
            y = baoa + t * bard
            if t >= 0 and y > 0 and y < baba:
                best = t
    for k in range(2):
        if k == 0:
            cx, cy, cz = a[0], a[1], a[2]
        else:
            cx, cy, cz = b[0], b[1], b[2]
        ocx, ocy, ocz = ox - cx, oy - cy, oz - cz
        Bs = _dot(ocx, ocy, ocz, dx, dy, dz)
        Cs = _dot(ocx, ocy, ocz, ocx, ocy, ocz) - r * r
        hs = Bs * Bs - Cs
        if hs >= 0 and Cs > 0:
            ts = -Bs - math.sqrt(hs)
            if ts >= 0 and ts < best:
                best = ts
    return best


@nb.njit(cache=True)
def nb_ray_plane(ox, oy, oz, dx, dy, dz, p, n):
    dn = dx * n[0] + dy * n[1] + dz * n[2]
    side = (ox - p[0]) * n[0] + (oy - p[1]) * n[1] + (oz - p[2]) * n[2]
    if dn < 0 and side >= 0:
        t = -side / dn
        if t >= 0:
            return t
    return np.inf
