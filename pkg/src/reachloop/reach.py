"""Flowpipe computation and reach-avoid verdicts.

Two engines:

* :func:`reach_linear` propagates a convex polygon exactly through the
  discretized closed loop of an LTI system with linear feedback;
* :func:`reach_nonlinear` propagates a list of boxes through a nonlinear
  (or affine) vector field under a network controller, with rigorous interval
  enclosures at every control-period boundary.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .controllers import LinearController, NeuralController, nn_lipschitz_bound
from .geometry import ConvexPolygon, IntervalBox, affine_map, clip_intersection
from .interval import Interval, imatmul, imatvec, matvec

__all__ = [
    "Flowpipe",
    "VerdictKind",
    "Verdict",
    "BernsteinPoly",
    "ReachConfig",
    "reach_linear",
    "reach_nonlinear",
    "bernstein_approx",
    "bernstein_error_bound",
    "nn_output_range",
    "check_verdict",
    "cell_verdicts",
    "compute_flowpipe",
]

LINEAR_BLOWUP = 1e9


@dataclass(frozen=True, eq=False)
class Flowpipe:
    """Per-step over-approximations ``S[0..T]``.

    ``sets[t]`` is a :class:`ConvexPolygon` (linear engine) or a tuple of
    :class:`IntervalBox` (nonlinear engine). ``horizon`` is the requested
    number of steps; after a blow-up ``len(sets) - 1 < horizon``.
    """

    sets: tuple
    horizon: int
    blowup: bool = False
    reason: str = ""

    @property
    def kind(self) -> str:
        return "polygon" if isinstance(self.sets[0], ConvexPolygon) else "boxes"

    @property
    def steps(self) -> int:
        return len(self.sets) - 1

    def __len__(self):
        return len(self.sets)

    def pieces(self, t: int) -> list:
        """Convex pieces of step ``t`` whose union is ``S[t]``."""
        s = self.sets[t]
        return [s] if isinstance(s, ConvexPolygon) else list(s)

    def step_polygons(self, t: int) -> list[ConvexPolygon]:
        return [p if isinstance(p, ConvexPolygon) else p.to_polygon() for p in self.pieces(t)]

    def step_bounding_box(self, t: int) -> IntervalBox:
        s = self.sets[t]
        if isinstance(s, ConvexPolygon):
            return s.bounding_box()
        return IntervalBox.hull(s)

    def to_csv(self) -> str:
        """Rows ``step,kind,coords...``: polygon vertices or box ``lo..., hi...``."""
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "kind", "coords"])
        for t, s in enumerate(self.sets):
            if isinstance(s, ConvexPolygon):
                w.writerow([t, "polygon"] + [repr(float(z)) for z in s.vertices.reshape(-1)])
            else:
                for b in s:
                    w.writerow([t, "box"] + [repr(float(z)) for z in np.concatenate([b.lo, b.hi])])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, horizon: Optional[int] = None) -> "Flowpipe":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        steps: dict[int, list] = {}
        for row in rows:
            t, kind, coords = int(row[0]), row[1], np.array([float(z) for z in row[2:]])
            if kind == "polygon":
                steps[t] = ConvexPolygon(coords.reshape(-1, 2))
            else:
                k = coords.size // 2
                steps.setdefault(t, []).append(IntervalBox(coords[:k], coords[k:]))
        sets = tuple(s if isinstance(s, ConvexPolygon) else tuple(s) for _, s in sorted(steps.items()))
        return cls(sets, len(sets) - 1 if horizon is None else horizon, blowup=horizon is not None and len(sets) - 1 < horizon)


class VerdictKind(str, Enum):
    REACH_AVOID = "reach-avoid"
    UNSAFE = "unsafe"
    GOAL_NOT_REACHED = "goal-not-reached"
    UNKNOWN = "unknown"


_EXIT_CODES = {
    VerdictKind.REACH_AVOID: 0,
    VerdictKind.UNSAFE: 1,
    VerdictKind.GOAL_NOT_REACHED: 2,
    VerdictKind.UNKNOWN: 3,
}


@dataclass(frozen=True)
class Verdict:
    kind: VerdictKind
    step: Optional[int] = None
    reason: str = ""

    @property
    def is_reach_avoid(self) -> bool:
        return self.kind is VerdictKind.REACH_AVOID

    @property
    def exit_code(self) -> int:
        return _EXIT_CODES[self.kind]

    def to_dict(self) -> dict:
        return {"verdict": self.kind.value, "step": self.step, "reason": self.reason}

    def __str__(self):
        extra = f" at step {self.step}" if self.step is not None else ""
        return f"{self.kind.value}{extra}" + (f" ({self.reason})" if self.reason else "")


def _piece_in_box(piece, box: IntervalBox) -> bool:
    if isinstance(piece, IntervalBox):
        return box.contains_box(piece)
    v = piece.vertices
    return bool(np.all(v >= box.lo) and np.all(v <= box.hi))


def _piece_hits(piece, box: IntervalBox) -> bool:
    if isinstance(piece, IntervalBox):
        return box.intersects_box(piece)
    return clip_intersection(piece, box) is not None


def check_verdict(fp: Flowpipe, unsafe: IntervalBox, goal: IntervalBox) -> Verdict:
    """Reach-avoid verdict of a flowpipe.

    Unsafe as soon as any step touches ``unsafe``. Otherwise reach-avoid if
    some step lies entirely inside ``goal`` and every step up to the horizon
    was computed; a blown-up flowpipe without a violation is Unknown.
    """
    goal_step = None
    for t in range(len(fp.sets)):
        pieces = fp.pieces(t)
        if any(_piece_hits(p, unsafe) for p in pieces):
            return Verdict(VerdictKind.UNSAFE, t)
        if goal_step is None and all(_piece_in_box(p, goal) for p in pieces):
            goal_step = t
    if fp.blowup:
        return Verdict(VerdictKind.UNKNOWN, fp.steps, fp.reason or "reachable set blew up")
    if goal_step is not None:
        return Verdict(VerdictKind.REACH_AVOID, goal_step)
    return Verdict(VerdictKind.GOAL_NOT_REACHED)


def cell_verdicts(fp: Flowpipe, unsafe: IntervalBox, goal: IntervalBox) -> list[Verdict]:
    """Verdict of every initial cell on its own.

    The box engine keeps one box per initial cell at every step, so each cell
    carries an independent certificate; a polygon flowpipe is a single cell.
    """
    if fp.kind == "polygon":
        return [check_verdict(fp, unsafe, goal)]
    out = []
    for i in range(len(fp.sets[0])):
        cell = Flowpipe(tuple((s[i],) for s in fp.sets), fp.horizon, fp.blowup, fp.reason)
        out.append(check_verdict(cell, unsafe, goal))
    return out


# ---------------------------------------------------------------- linear engine


def reach_linear(sys_d, controller: LinearController, X0, T: int) -> Flowpipe:
    """Exact polygon flowpipe of ``x+ = (A_d + B_d k^T) x + B_d b + c_d``.

    ``sys_d`` is the ``(A_d, B_d, c_d)`` triple from
    :func:`~reachloop.dynamics.discretize_lti`.
    """
    Ad, Bd, cd = (np.asarray(a, dtype=float) for a in sys_d)
    Bd = Bd.reshape(Ad.shape[0], -1)
    if Ad.shape != (2, 2):
        raise ValueError("the polygon engine is 2D only")
    M = Ad + Bd @ controller.gain.reshape(1, -1)
    off = Bd[:, 0] * controller.bias + cd
    S = X0.to_polygon() if isinstance(X0, IntervalBox) else X0
    sets = [S]
    for _ in range(T):
        S = affine_map(S, M, off)
        if not np.all(np.isfinite(S.vertices)) or np.abs(S.vertices).max() > LINEAR_BLOWUP:
            return Flowpipe(tuple(sets), T, blowup=True, reason="vertex coordinate exceeded 1e9")
        sets.append(S)
    return Flowpipe(tuple(sets), T)


# ---------------------------------------------------------------- Bernstein


@dataclass(frozen=True, eq=False)
class BernsteinPoly:
    """Tensor-product Bernstein polynomial on a box, with its error bound."""

    degree: tuple
    coeffs: np.ndarray
    domain: IntervalBox
    error_bound: float

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        y = (x - self.domain.lo) / self.domain.width
        bases = [_bernstein_basis(d, y[..., j]) for j, d in enumerate(self.degree)]
        axes = "abcdefgh"[: len(self.degree)]
        expr = axes + "," + ",".join("..." + a for a in axes) + "->..."
        return np.einsum(expr, self.coeffs, *bases)

    @property
    def range(self) -> tuple[float, float]:
        """Enclosure of the polynomial over its domain (convex-hull property)."""
        return float(self.coeffs.min()), float(self.coeffs.max())


def _bernstein_basis(d: int, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)[..., None]
    a = np.arange(d + 1)
    binom = np.array([math.comb(d, k) for k in a], dtype=float)
    return binom * y**a * (1.0 - y) ** (d - a)


def _grid_points(domain: IntervalBox, degree: Sequence[int]) -> np.ndarray:
    axes = [np.linspace(lo, hi, d + 1) for lo, hi, d in zip(domain.lo, domain.hi, degree)]
    mesh = np.meshgrid(*axes, indexing="ij")
    return np.stack(mesh, axis=-1)


def _rescaled_lipschitz(controller, domain: IntervalBox) -> float:
    """Lipschitz bound of ``y -> controller(lo + y * width)`` on the unit box."""
    w = domain.width
    if isinstance(controller, LinearController):
        return float(np.linalg.norm(controller.gain * w))
    W = list(controller.weights)
    b = list(controller.biases)
    b[0] = b[0] + W[0] @ domain.lo
    W[0] = W[0] * w
    scaled = NeuralController(tuple(W), tuple(b), controller.activations)
    return nn_lipschitz_bound(scaled, IntervalBox(np.zeros_like(w), np.ones_like(w)))


def bernstein_error_bound(controller, degree: Sequence[int], domain: IntervalBox) -> float:
    """``(L / 2) * sqrt(sum_j 1 / d_j)`` with ``L`` taken on the normalized domain."""
    degree = tuple(int(d) for d in degree)
    if any(d < 1 for d in degree):
        raise ValueError("Bernstein degrees must be >= 1")
    L = _rescaled_lipschitz(controller, domain)
    return 0.5 * L * math.sqrt(sum(1.0 / d for d in degree))


def bernstein_approx(controller, degree: Sequence[int], domain: IntervalBox) -> BernsteinPoly:
    degree = tuple(int(d) for d in degree)
    if len(degree) != domain.dim:
        raise ValueError(f"need one degree per dimension ({domain.dim}), got {degree}")
    if np.any(domain.width <= 0):
        raise ValueError("Bernstein domain must be non-degenerate")
    coeffs = controller(_grid_points(domain, degree))[..., 0]
    eps = bernstein_error_bound(controller, degree, domain)
    return BernsteinPoly(degree, coeffs, domain, eps)


def _bernstein_range_batch(controller, X: Interval, degree) -> Interval:
    """Bernstein range +- error bound for a batch of 2D boxes."""
    d1, d2 = degree
    g1 = np.linspace(0.0, 1.0, d1 + 1)
    g2 = np.linspace(0.0, 1.0, d2 + 1)
    w = X.hi - X.lo
    lo = X.lo
    px = lo[:, None, None, 0] + g1[None, :, None] * w[:, None, None, 0]
    py = lo[:, None, None, 1] + g2[None, None, :] * w[:, None, None, 1]
    pts = np.stack(np.broadcast_arrays(px, py), axis=-1)
    coeffs = controller(pts)[..., 0].reshape(len(lo), -1)
    root = math.sqrt(1.0 / d1 + 1.0 / d2)
    eps = np.array([0.5 * _rescaled_lipschitz(controller, IntervalBox(a, b)) * root for a, b in zip(X.lo, X.hi)])
    return Interval(coeffs.min(axis=1) - eps, coeffs.max(axis=1) + eps)


def _control_range(controller, X: Interval, degree=(2, 2)) -> Interval:
    """Batch control enclosure, shape ``(nbox, 1)``."""
    if isinstance(controller, LinearController):
        return matvec(controller.gain.reshape(1, -1), X) + controller.bias
    ia = controller.interval_forward(X)
    if degree is None or X.shape[-1] != 2 or np.any(X.hi - X.lo <= 0):
        return ia
    bern = _bernstein_range_batch(controller, X, degree)
    return Interval(np.maximum(ia.lo[:, 0], bern.lo), np.minimum(ia.hi[:, 0], bern.hi))[:, None]


def nn_output_range(controller, box: IntervalBox, degree=(2, 2)) -> tuple[float, float]:
    """Output enclosure over ``box``: interval propagation intersected with the
    Bernstein range widened by its error bound."""
    X = Interval(box.lo[None, :], box.hi[None, :])
    r = _control_range(controller, X, degree)
    return float(r.lo[0, 0]), float(r.hi[0, 0])


def _control_jacobian(controller, X: Interval) -> Interval:
    if isinstance(controller, LinearController):
        g = np.broadcast_to(controller.gain.reshape(1, -1), X.shape[:-1] + (1, controller.state_dim))
        return Interval(g, g)
    return controller.interval_jacobian(X)


# ---------------------------------------------------------------- nonlinear engine


@dataclass(frozen=True)
class ReachConfig:
    """Tightness knobs of the nonlinear engine."""

    subdiv: int = 4
    micro: int = 20
    degree: tuple = (2, 2)
    blowup_width: float = 10.0
    method: str = "mean-value"


def _ih(h: float, F: Interval) -> Interval:
    """``[0, h] * F``."""
    a, b = h * F.lo, h * F.hi
    return Interval(np.minimum(a, 0.0), np.maximum(b, 0.0))


def _inflate(E: Interval) -> Interval:
    """Picard widening: 10% of each width plus 1% of the widest in the row,
    so components with a near-zero derivative can still grow."""
    w = E.width
    row = w.reshape(w.shape[0], -1).max(axis=1).reshape((-1,) + (1,) * (w.ndim - 1))
    return E.inflate(1e-12 + 1e-9 * E.mag() + 0.01 * row, 0.1)


def _enclose(sys, X: Interval, U: Interval, h: float, iters: int = 12) -> Optional[Interval]:
    """A priori enclosure of all solutions over ``[0, h]``.

    Finds ``E`` with ``X + [0, h] f(E, U) subset E`` (Picard containment),
    which guarantees every solution from ``X`` stays in ``E``.
    """
    E = X + _ih(h, sys.rhs_interval(X, U))
    for _ in range(iters):
        Einf = _inflate(E)
        cand = X + _ih(h, sys.rhs_interval(Einf, U))
        if np.all(Einf.contains(cand)):
            return cand
        E = cand.hull(Einf)
    return None


def _euler_step(sys, X: Interval, U: Interval, h: float, E: Interval) -> Interval:
    """Interval Euler with Lagrange remainder ``h^2/2 * J f`` on the enclosure."""
    C = Interval.point(X.mid)
    n = X.shape[-1]
    J = sys.jac_interval(X, U)
    G = Interval(np.eye(n) + h * J.lo, np.eye(n) + h * J.hi)
    mean_value = C + h * sys.rhs_interval(C, U) + imatvec(G, X - X.mid)
    naive = X + h * sys.rhs_interval(X, U)
    first = Interval(np.maximum(mean_value.lo, naive.lo), np.minimum(mean_value.hi, naive.hi))
    FE = sys.rhs_interval(E, U)
    rem = (0.5 * h * h) * imatvec(sys.jac_interval(E, U), FE)
    return first + rem


def _input_jacobian(sys, shape) -> np.ndarray:
    B = np.asarray(getattr(sys, "B", np.array([[0.0], [1.0]])), dtype=float)
    return np.broadcast_to(B, shape[:-1] + B.shape)


def _enclose_matrix(S: Interval, J: Interval, h: float, Bu: Optional[np.ndarray] = None, iters: int = 12):
    """A priori enclosure for ``S' = J S (+ Bu)`` over ``[0, h]``."""

    def drift(St):
        d = imatmul(J, St)
        return d if Bu is None else d + Bu

    St = S + _ih(h, drift(S))
    for _ in range(iters):
        Sinf = _inflate(St)
        cand = S + _ih(h, drift(Sinf))
        if np.all(Sinf.contains(cand)):
            return cand, drift(cand)
        St = cand.hull(Sinf)
    return None, None


def _period_interval(sys, X, U, h, micro):
    for _ in range(micro):
        E = _enclose(sys, X, U, h)
        if E is None:
            return None
        X = _euler_step(sys, X, U, h, E)
    return X


def _period_mean_value(sys, controller, X: Interval, U: Interval, h: float, micro: int):
    """One control period via the mean-value form of the period map.

    ``P(x) = flow(x, kappa(x))``; ``P(X) subset P(c) + (S_x + S_u dkappa(X)) (X - c)``
    with sensitivity enclosures integrated along the box enclosures. Boxes and
    their centres advance together as one batch.
    """
    nb, n = X.shape
    m = U.shape[-1]
    c = X.mid
    uc = controller(c)
    Y = Interval(np.concatenate([X.lo, c]), np.concatenate([X.hi, c]))
    V = Interval(np.concatenate([U.lo, uc]), np.concatenate([U.hi, uc]))
    # S = [S_x | S_u] solves S' = J S + [0 | B]
    S0 = np.zeros((nb, n, n + m))
    S0[:, :, :n] = np.eye(n)
    S = Interval(S0, S0)
    Bu = np.zeros((nb, n, n + m))
    Bu[:, :, n:] = _input_jacobian(sys, (nb, n))
    for _ in range(micro):
        E = _enclose(sys, Y, V, h)
        if E is None:
            return None
        J = sys.jac_interval(E[:nb], U)
        S_t, dS = _enclose_matrix(S, J, h, Bu)
        if S_t is None:
            return None
        S = S + h * dS
        Y = _euler_step(sys, Y, V, h, E)
    JP = S[..., :n] + imatmul(S[..., n:], _control_jacobian(controller, X))
    mv = Y[nb:] + imatvec(JP, X - c)
    Xb = Y[:nb]
    return Interval(np.maximum(mv.lo, Xb.lo), np.minimum(mv.hi, Xb.hi))


def reach_nonlinear(
    sys,
    controller,
    X0: IntervalBox,
    T: int,
    subdiv: int = 4,
    micro: int = 20,
    degree=(2, 2),
    blowup_width: float = 10.0,
    method: str = "mean-value",
) -> Flowpipe:
    """Box-list flowpipe of a sampled-data loop under zero-order hold.

    ``X0`` is split into ``subdiv`` cells per axis; each cell is propagated
    independently and every step of the flowpipe keeps one box per cell.
    ``method="interval"`` treats the held control as a free interval from
    :func:`nn_output_range` and applies interval Euler with remainder per
    micro-step; ``method="mean-value"`` (default) additionally encloses the
    whole period map by its mean-value form, which keeps the dependence of the
    control on the state and is much tighter under feedback.
    """
    if subdiv < 1 or micro < 1:
        raise ValueError("subdiv and micro must be >= 1")
    if method not in ("mean-value", "interval"):
        raise ValueError(f"unknown method {method!r}")
    cells = X0.grid(subdiv)
    X = Interval(np.array([b.lo for b in cells]), np.array([b.hi for b in cells]))
    h = sys.delta / micro
    sets = [tuple(cells)]
    for k in range(T):
        U = _control_range(controller, X, degree)
        if method == "interval":
            Xn = _period_interval(sys, X, U, h, micro)
        else:
            Xn = _period_mean_value(sys, controller, X, U, h, micro)
        if Xn is None:
            return Flowpipe(tuple(sets), T, True, f"no a priori enclosure in period {k}")
        if not (np.all(np.isfinite(Xn.lo)) and np.all(np.isfinite(Xn.hi))):
            return Flowpipe(tuple(sets), T, True, f"non-finite enclosure in period {k}")
        if np.max(Xn.hi - Xn.lo) > blowup_width:
            return Flowpipe(tuple(sets), T, True, f"box width exceeded {blowup_width:g} in period {k + 1}")
        X = Xn
        sets.append(tuple(IntervalBox(a, b) for a, b in zip(X.lo, X.hi)))
    return Flowpipe(tuple(sets), T)


def compute_flowpipe(sys, controller, X0: IntervalBox, T: int, cfg: ReachConfig = ReachConfig()) -> Flowpipe:
    """Dispatch to the exact polygon engine when the loop is LTI + linear."""
    from .dynamics import LtiSystem, discretize_lti

    if isinstance(sys, LtiSystem) and isinstance(controller, LinearController):
        return reach_linear(discretize_lti(sys), controller, X0.to_polygon(), T)
    return reach_nonlinear(
        sys, controller, X0, T, cfg.subdiv, cfg.micro, cfg.degree, cfg.blowup_width, cfg.method
    )
