"""Exact 2D convex-set primitives: axis-aligned boxes and convex polygons.

Polygons are kept in vertex representation, counter-clockwise. A polygon with
fewer than three vertices (or zero area) is *degenerate* and still
participates in intersection tests; emptiness is signalled with ``None``,
never with a zero-area polygon.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

__all__ = [
    "GeometryError",
    "OverlapError",
    "IntervalBox",
    "ConvexPolygon",
    "clip_intersection",
    "polygon_area",
    "min_sq_distance",
    "affine_map",
    "intersects",
    "polygon_to_row",
    "polygon_from_row",
]

DEGENERATE_AREA = 1e-14
_REL_TOL = 1e-12


class GeometryError(ValueError):
    """Malformed polygon or box."""


class OverlapError(ValueError):
    """Raised when a distance is requested between sets with overlapping interiors."""


@dataclass(frozen=True, eq=False)
class IntervalBox:
    """Axis-aligned box ``[lo_1, hi_1] x ... x [lo_n, hi_n]``."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.array(self.lo, dtype=float).reshape(-1)
        hi = np.array(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or lo.size == 0:
            raise GeometryError(f"box bounds must be equal-length vectors, got {lo.shape} and {hi.shape}")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise GeometryError("box bounds must be finite")
        if np.any(lo > hi):
            raise GeometryError(f"box has lo > hi: lo={lo.tolist()} hi={hi.tolist()}")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @classmethod
    def from_bounds(cls, bounds: Sequence[Sequence[float]]) -> "IntervalBox":
        """Build from ``[[lo_1, hi_1], [lo_2, hi_2], ...]``."""
        arr = np.asarray(bounds, dtype=float)
        if arr.ndim != 2 or arr.shape[1] != 2:
            raise GeometryError(f"expected a list of [lo, hi] pairs, got shape {arr.shape}")
        return cls(arr[:, 0], arr[:, 1])

    @classmethod
    def hull(cls, boxes: Iterable["IntervalBox"]) -> "IntervalBox":
        boxes = list(boxes)
        if not boxes:
            raise GeometryError("hull of an empty box list")
        lo = np.min([b.lo for b in boxes], axis=0)
        hi = np.max([b.hi for b in boxes], axis=0)
        return cls(lo, hi)

    @property
    def dim(self) -> int:
        return self.lo.size

    @property
    def width(self) -> np.ndarray:
        return self.hi - self.lo

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def volume(self) -> float:
        return float(np.prod(self.width))

    def bounds(self) -> list:
        return [[float(a), float(b)] for a, b in zip(self.lo, self.hi)]

    def contains_point(self, x) -> bool:
        x = np.asarray(x, dtype=float)
        return bool(np.all(x >= self.lo) and np.all(x <= self.hi))

    def contains_box(self, other: "IntervalBox") -> bool:
        return bool(np.all(other.lo >= self.lo) and np.all(other.hi <= self.hi))

    def intersects_box(self, other: "IntervalBox") -> bool:
        return bool(np.all(self.lo <= other.hi) and np.all(other.lo <= self.hi))

    def corners(self) -> np.ndarray:
        if self.dim != 2:
            raise GeometryError("corners() is only defined for 2D boxes")
        (x0, y0), (x1, y1) = self.lo, self.hi
        return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]])

    def to_polygon(self) -> "ConvexPolygon":
        return ConvexPolygon.from_points(self.corners())

    def split(self, axis: int) -> tuple["IntervalBox", "IntervalBox"]:
        mid = self.center[axis]
        hi_left = self.hi.copy()
        hi_left[axis] = mid
        lo_right = self.lo.copy()
        lo_right[axis] = mid
        return IntervalBox(self.lo, hi_left), IntervalBox(lo_right, self.hi)

    def grid(self, n: int) -> list["IntervalBox"]:
        """Split every axis into ``n`` equal cells, row-major over axes."""
        edges = [np.linspace(a, b, n + 1) for a, b in zip(self.lo, self.hi)]
        cells = []
        for idx in np.ndindex(*([n] * self.dim)):
            lo = [edges[k][i] for k, i in enumerate(idx)]
            hi = [edges[k][i + 1] for k, i in enumerate(idx)]
            cells.append(IntervalBox(lo, hi))
        return cells

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.lo + rng.random((n, self.dim)) * self.width

    def __repr__(self):
        inner = " x ".join(f"[{a:g}, {b:g}]" for a, b in zip(self.lo, self.hi))
        return f"IntervalBox({inner})"


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _scale(pts: np.ndarray) -> float:
    return max(1.0, float(np.abs(pts).max())) if len(pts) else 1.0


def _hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; drops duplicate and collinear points."""
    pts = np.unique(np.asarray(points, dtype=float).reshape(-1, 2), axis=0)
    eps = _REL_TOL * _scale(pts)
    # merge near-duplicates: the turn test below is only meaningful between
    # points that are farther apart than the tolerance
    keep = []
    for p in pts:
        if not keep or np.min(np.linalg.norm(np.array(keep) - p, axis=1)) > eps:
            keep.append(p)
    pts = np.array(keep)
    if len(pts) <= 2:
        return pts

    def half(seq):
        out = []
        for p in seq:
            # drop out[-1] unless it lies strictly left of out[-2] -> p by more than eps
            while len(out) >= 2 and _cross(out[-2], out[-1], p) <= eps * np.hypot(*(p - out[-2])):
                out.pop()
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = lower[:-1] + upper[:-1]
    return np.array(hull) if hull else pts[:1]


@dataclass(frozen=True, eq=False)
class ConvexPolygon:
    """Convex polygon as a counter-clockwise vertex array of shape ``(k, 2)``.

    Construction validates convexity and orientation; use
    :meth:`from_points` to build the hull of an arbitrary point set.
    """

    vertices: np.ndarray

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float).reshape(-1, 2)
        if len(v) == 0:
            raise GeometryError("a polygon needs at least one vertex; use None for the empty set")
        if not np.all(np.isfinite(v)):
            raise GeometryError("polygon vertices must be finite")
        if len(v) >= 3:
            tol = _REL_TOL * _scale(v) ** 2
            k = len(v)
            turns = np.array([_cross(v[i], v[(i + 1) % k], v[(i + 2) % k]) for i in range(k)])
            if np.any(turns < -tol):
                raise GeometryError("polygon is not convex or not counter-clockwise")
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)

    @classmethod
    def from_points(cls, points) -> "ConvexPolygon":
        return cls(_hull(points))

    @property
    def is_degenerate(self) -> bool:
        return len(self.vertices) < 3 or polygon_area(self) < DEGENERATE_AREA

    def bounding_box(self) -> IntervalBox:
        return IntervalBox(self.vertices.min(axis=0), self.vertices.max(axis=0))

    def contains_point(self, x, tol: float = 0.0) -> bool:
        v = self.vertices
        if len(v) < 3:
            return _point_segment_sq(np.asarray(x, float), v[0], v[-1]) <= tol * tol
        k = len(v)
        return all(_cross(v[i], v[(i + 1) % k], x) >= -tol for i in range(k))

    def __len__(self):
        return len(self.vertices)

    def __repr__(self):
        return f"ConvexPolygon({np.round(self.vertices, 6).tolist()})"


def _as_polygon(s) -> ConvexPolygon:
    if isinstance(s, IntervalBox):
        return s.to_polygon()
    if isinstance(s, ConvexPolygon):
        return s
    raise GeometryError(f"expected ConvexPolygon or IntervalBox, got {type(s).__name__}")


def _clip_against(subject: np.ndarray, clip: np.ndarray) -> np.ndarray:
    """Sutherland-Hodgman: clip ``subject`` by every edge of the CCW polygon ``clip``."""
    tol = _REL_TOL * max(_scale(subject), _scale(clip)) ** 2
    out = list(subject)
    k = len(clip)
    for i in range(k):
        if not out:
            break
        a, b = clip[i], clip[(i + 1) % k]
        inp, out = out, []
        prev = inp[-1]
        prev_in = _cross(a, b, prev) >= -tol
        for cur in inp:
            cur_in = _cross(a, b, cur) >= -tol
            if cur_in != prev_in:
                d_prev = _cross(a, b, prev)
                d_cur = _cross(a, b, cur)
                t = d_prev / (d_prev - d_cur)
                out.append(prev + t * (cur - prev))
            if cur_in:
                out.append(cur)
            prev, prev_in = cur, cur_in
    return np.array(out).reshape(-1, 2)


def _segment_overlap(p: np.ndarray, q: np.ndarray) -> Optional[np.ndarray]:
    """Intersection of two degenerate polygons (points or segments)."""
    a0, a1 = p[0], p[-1]
    b0, b1 = q[0], q[-1]
    tol = _REL_TOL * max(_scale(p), _scale(q))
    candidates = [x for x in (a0, a1) if _point_segment_sq(x, b0, b1) <= tol * tol]
    candidates += [x for x in (b0, b1) if _point_segment_sq(x, a0, a1) <= tol * tol]
    da, db = a1 - a0, b1 - b0
    den = da[0] * db[1] - da[1] * db[0]
    if abs(den) > tol:
        t = ((b0 - a0)[0] * db[1] - (b0 - a0)[1] * db[0]) / den
        s = ((b0 - a0)[0] * da[1] - (b0 - a0)[1] * da[0]) / den
        if -_REL_TOL <= t <= 1 + _REL_TOL and -_REL_TOL <= s <= 1 + _REL_TOL:
            candidates.append(a0 + t * da)
    if not candidates:
        return None
    return np.array(candidates)


def clip_intersection(p, q) -> Optional[ConvexPolygon]:
    """Intersection of two convex sets (boxes are promoted to polygons).

    Returns ``None`` when the closed sets are disjoint. Touching sets give a
    degenerate polygon (segment or point).
    """
    p, q = _as_polygon(p), _as_polygon(q)
    pv, qv = p.vertices, q.vertices
    p_deg, q_deg = len(pv) < 3, len(qv) < 3
    if p_deg and q_deg:
        pts = _segment_overlap(pv, qv)
    else:
        if q_deg:
            pv, qv = qv, pv
        pts = _clip_against(pv, qv)
    if pts is None or len(pts) == 0:
        return None
    return ConvexPolygon.from_points(pts)


def intersects(p, q) -> bool:
    return clip_intersection(p, q) is not None


def polygon_area(p: Optional[ConvexPolygon]) -> float:
    """Shoelace area; 0 for ``None`` and degenerate polygons."""
    if p is None:
        return 0.0
    v = _as_polygon(p).vertices
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return float(abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))) / 2.0)


def _point_segment_sq(x: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    dd = float(d @ d)
    t = 0.0 if dd == 0.0 else min(1.0, max(0.0, float((x - a) @ d) / dd))
    r = x - (a + t * d)
    return float(r @ r)


def _edges(v: np.ndarray):
    if len(v) == 1:
        return [(v[0], v[0])]
    if len(v) == 2:
        return [(v[0], v[1])]
    return [(v[i], v[(i + 1) % len(v)]) for i in range(len(v))]


def min_sq_distance(p, q) -> float:
    """Minimum squared Euclidean distance between two convex sets.

    Exact for closed convex polygons: the closest pair always involves a
    vertex of one set and an edge of the other. Raises :class:`OverlapError`
    if the interiors overlap; touching sets give 0.
    """
    p, q = _as_polygon(p), _as_polygon(q)
    inter = clip_intersection(p, q)
    if inter is not None:
        if polygon_area(inter) > DEGENERATE_AREA:
            raise OverlapError("min_sq_distance requires disjoint sets")
        return 0.0
    best = np.inf
    for x in p.vertices:
        for a, b in _edges(q.vertices):
            best = min(best, _point_segment_sq(x, a, b))
    for x in q.vertices:
        for a, b in _edges(p.vertices):
            best = min(best, _point_segment_sq(x, a, b))
    return float(best)


def affine_map(p, M, c) -> ConvexPolygon:
    """Image ``{M v + c}`` of a convex polygon, re-oriented counter-clockwise."""
    p = _as_polygon(p)
    M = np.asarray(M, dtype=float).reshape(2, 2)
    c = np.asarray(c, dtype=float).reshape(2)
    img = p.vertices @ M.T + c
    det = float(np.linalg.det(M))
    if len(img) < 3 or abs(det) <= DEGENERATE_AREA:
        return ConvexPolygon.from_points(img)
    if det < 0:
        img = img[::-1]
    try:
        return ConvexPolygon(img)
    except GeometryError:
        # rounding on near-collinear vertices
        return ConvexPolygon.from_points(img)


def polygon_to_row(step: int, p: ConvexPolygon) -> list:
    """CSV row ``step,vx0,vy0,vx1,vy1,...``."""
    return [step] + [repr(float(z)) for z in p.vertices.reshape(-1)]


def polygon_from_row(row: Sequence) -> tuple[int, ConvexPolygon]:
    step = int(row[0])
    coords = np.array([float(z) for z in row[1:]]).reshape(-1, 2)
    return step, ConvexPolygon(coords)
