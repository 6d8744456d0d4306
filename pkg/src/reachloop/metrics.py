"""Verifier-feedback metrics over flowpipes.

Geometric scores are signed: the unsafe score is negative exactly when the
flowpipe touches the unsafe set, the goal score positive exactly when it
touches the goal. The Wasserstein score compares uniform point clouds of
the last flowpipe step with clouds of the goal and unsafe sets.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from .geometry import (
    ConvexPolygon,
    IntervalBox,
    clip_intersection,
    min_sq_distance,
    polygon_area,
)
from .reach import Flowpipe

__all__ = [
    "MetricUnavailable",
    "GeometricScore",
    "PointCloud",
    "WassersteinScore",
    "geometric_unsafe",
    "geometric_goal",
    "geometric_score",
    "set_to_cloud",
    "wasserstein",
    "wasserstein_score",
]

# Reported for a flowpipe that touches a set along a measure-zero boundary,
# so that "touching" keeps the sign of an overlap.
TOUCH_PENALTY = 1e-12


class MetricUnavailable(RuntimeError):
    """The flowpipe blew up, so distances to it are meaningless."""


@dataclass(frozen=True)
class GeometricScore:
    d_u: float
    d_g: float


@dataclass(frozen=True)
class WassersteinScore:
    W_goal: float
    W_unsafe: float
    objective: float


@dataclass(frozen=True, eq=False)
class PointCloud:
    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.array(self.points, dtype=float).reshape(len(self.points), -1)
        w = np.array(self.weights, dtype=float).reshape(-1)
        if len(pts) == 0 or len(w) != len(pts):
            raise ValueError("a cloud needs at least one point and one weight per point")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
            raise ValueError("cloud weights must be non-negative and sum to 1")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, points) -> "PointCloud":
        points = np.asarray(points, dtype=float)
        return cls(points, np.full(len(points), 1.0 / len(points)))

    def __len__(self):
        return len(self.points)


def _require(fp: Flowpipe):
    if fp.blowup:
        raise MetricUnavailable(fp.reason or "flowpipe blew up")


def _box_union_area(boxes: list[IntervalBox]) -> float:
    """Exact area of a union of 2D boxes by coordinate compression."""
    if not boxes:
        return 0.0
    xs = np.unique(np.concatenate([[b.lo[0], b.hi[0]] for b in boxes]))
    ys = np.unique(np.concatenate([[b.lo[1], b.hi[1]] for b in boxes]))
    lo = np.array([b.lo for b in boxes])
    hi = np.array([b.hi for b in boxes])
    cx = 0.5 * (xs[:-1] + xs[1:])
    cy = 0.5 * (ys[:-1] + ys[1:])
    inx = (lo[:, 0, None] <= cx) & (cx <= hi[:, 0, None])  # (k, nx)
    iny = (lo[:, 1, None] <= cy) & (cy <= hi[:, 1, None])  # (k, ny)
    covered = np.einsum("kx,ky->xy", inx.astype(int), iny.astype(int)) > 0
    return float(np.sum(covered * np.outer(np.diff(xs), np.diff(ys))))


def _box_overlap(a: IntervalBox, b: IntervalBox):
    lo = np.maximum(a.lo, b.lo)
    hi = np.minimum(a.hi, b.hi)
    return IntervalBox(lo, hi) if np.all(lo <= hi) else None


def _box_sq_distance(a: IntervalBox, b: IntervalBox) -> float:
    gap = np.maximum(0.0, np.maximum(a.lo - b.hi, b.lo - a.hi))
    return float(gap @ gap)


def _step_overlap(fp: Flowpipe, t: int, target: IntervalBox):
    """``(touches, area of S[t] cap target)``."""
    s = fp.sets[t]
    if isinstance(s, ConvexPolygon):
        inter = clip_intersection(s, target)
        return inter is not None, polygon_area(inter)
    parts = [o for o in (_box_overlap(b, target) for b in s) if o is not None]
    return bool(parts), _box_union_area(parts)


def _step_sq_distance(fp: Flowpipe, t: int, target: IntervalBox) -> float:
    s = fp.sets[t]
    if isinstance(s, ConvexPolygon):
        return min_sq_distance(s, target)
    return min(_box_sq_distance(b, target) for b in s)


def geometric_unsafe(fp: Flowpipe, unsafe: IntervalBox) -> float:
    """Negative summed overlap area if the flowpipe hits ``unsafe``, else the
    smallest squared distance to it over all steps."""
    _require(fp)
    overlaps = [_step_overlap(fp, t, unsafe) for t in range(len(fp))]
    if any(hit for hit, _ in overlaps):
        area = sum(a for _, a in overlaps)
        return -area if area > 0 else -TOUCH_PENALTY
    return min(_step_sq_distance(fp, t, unsafe) for t in range(len(fp)))


def geometric_goal(fp: Flowpipe, goal: IntervalBox) -> float:
    """Largest per-step overlap area with ``goal`` if any, else minus the
    smallest squared distance to it."""
    _require(fp)
    overlaps = [_step_overlap(fp, t, goal) for t in range(len(fp))]
    if any(hit for hit, _ in overlaps):
        area = max(a for _, a in overlaps)
        return area if area > 0 else TOUCH_PENALTY
    return -min(_step_sq_distance(fp, t, goal) for t in range(len(fp)))


def geometric_score(fp: Flowpipe, unsafe: IntervalBox, goal: IntervalBox) -> GeometricScore:
    return GeometricScore(geometric_unsafe(fp, unsafe), geometric_goal(fp, goal))


def _fallback_points(pieces) -> np.ndarray:
    verts = np.unique(np.concatenate([np.asarray(p.vertices) for p in pieces]), axis=0)
    if len(verts) == 2:
        return np.vstack([verts, verts.mean(axis=0)])
    if len(verts) > 2:
        return np.vstack([verts, verts.mean(axis=0)])
    return verts


def set_to_cloud(s, n: int, seed) -> PointCloud:
    """Uniform sample of ``n`` points from a polygon, box, or list of boxes.

    Polygons are sampled through a fan triangulation; box lists pick a box
    with probability proportional to its area, then a uniform point in it. Zero-area sets fall back to their vertices plus their centroid.
    """
    if n < 1:
        raise ValueError("cloud size must be >= 1")
    rng = np.random.default_rng(seed)
    if isinstance(s, (ConvexPolygon, IntervalBox)):
        s = [s]
    s = list(s)
    if all(isinstance(p, IntervalBox) for p in s):
        areas = np.array([b.volume() for b in s])
        if areas.sum() <= 0:
            return PointCloud.uniform(_fallback_points([b.to_polygon() for b in s]))
        idx = rng.choice(len(s), size=n, p=areas / areas.sum())
        lo = np.array([b.lo for b in s])[idx]
        w = np.array([b.width for b in s])[idx]
        return PointCloud.uniform(lo + rng.random((n, 2)) * w)
    polys = [p if isinstance(p, ConvexPolygon) else p.to_polygon() for p in s]
    areas = np.array([polygon_area(p) for p in polys])
    if areas.sum() <= 0:
        return PointCloud.uniform(_fallback_points(polys))
    pick = rng.choice(len(polys), size=n, p=areas / areas.sum())
    points = np.empty((n, 2))
    for k in range(len(polys)):
        need = int(np.sum(pick == k))
        if need:
            points[pick == k] = _triangle_sample(polys[k], need, rng)
    return PointCloud.uniform(points)


def _triangle_sample(poly: ConvexPolygon, n: int, rng) -> np.ndarray:
    """Uniform points in a convex polygon: pick a fan triangle by area, then a
    uniform point in it (reflected unit-square trick)."""
    v = poly.vertices
    a, b, c = v[0], v[1:-1], v[2:]
    e1, e2 = b - a, c - a
    areas = 0.5 * np.abs(e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])
    k = rng.choice(len(areas), size=n, p=areas / areas.sum())
    r = rng.random((n, 2))
    flip = r.sum(axis=1) > 1.0
    r[flip] = 1.0 - r[flip]
    return a + r[:, :1] * e1[k] + r[:, 1:] * e2[k]


def wasserstein(a: PointCloud, b: PointCloud) -> float:
    """Exact 1-Wasserstein distance with Euclidean ground cost.

    Equal-size uniform clouds are solved as an assignment problem (an optimal
    vertex of the transport polytope is a permutation); anything else as the
    full transportation LP.
    """
    C = cdist(a.points, b.points)
    na, nb = len(a), len(b)
    if na == nb and np.allclose(a.weights, 1.0 / na) and np.allclose(b.weights, 1.0 / nb):
        rows, cols = linear_sum_assignment(C)
        return float(C[rows, cols].sum() / na)
    A_eq = np.zeros((na + nb, na * nb))
    for i in range(na):
        A_eq[i, i * nb : (i + 1) * nb] = 1.0
    for j in range(nb):
        A_eq[na + j, j::nb] = 1.0
    b_eq = np.concatenate([a.weights, b.weights])
    res = linprog(
        C.reshape(-1),
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=(0, None),
        method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise RuntimeError(f"transport LP failed: {res.message}")
    return float(max(res.fun, 0.0))


def _cloud_seeds(seed):
    ss = np.random.SeedSequence(seed)
    return ss.spawn(3)


def wasserstein_score(
    fp: Flowpipe, goal: IntervalBox, unsafe: IntervalBox, lam: float = 0.5, n: int = 64, seed=0
) -> WassersteinScore:
    """``W(last step, goal) - lam * W(last step, unsafe)`` on ``n``-point clouds."""
    _require(fp)
    s_r, s_g, s_u = _cloud_seeds(seed)
    last = fp.pieces(fp.steps)
    r = set_to_cloud(last, n, s_r)
    g = set_to_cloud(goal, n, s_g)
    u = set_to_cloud(unsafe, n, s_u)
    w_goal = wasserstein(r, g)
    w_unsafe = wasserstein(r, u)
    return WassersteinScore(w_goal, w_unsafe, w_goal - lam * w_unsafe)
