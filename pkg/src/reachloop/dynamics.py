"""System models, exact zero-order-hold discretization and trajectory simulation.

Both system classes expose the same small protocol used by simulation and by
the interval reachability engine:

* ``rhs(x, u)`` -- point evaluation, vectorized over leading axes;
* ``rhs_interval(X, U)`` -- enclosure of the vector field over boxes;
* ``jac_interval(X, U)`` -- enclosure of ``df/dx`` over boxes, ``(..., n, n)``.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import expm

from .interval import Interval, matvec

__all__ = [
    "DivergenceError",
    "LtiSystem",
    "NonlinearSystem",
    "Trace",
    "discretize_lti",
    "vanderpol_rhs",
    "simulate",
    "simulate_many",
    "acc_system",
    "vanderpol_system",
]

DIVERGENCE_NORM = 1e9


class DivergenceError(RuntimeError):
    """Simulated state left the ball of radius ``DIVERGENCE_NORM``."""


@dataclass(frozen=True, eq=False)
class LtiSystem:
    """``x' = A x + B u + c`` sampled every ``delta`` seconds."""

    A: np.ndarray
    B: np.ndarray
    c: np.ndarray = None
    delta: float = 0.1

    def __post_init__(self):
        A = np.atleast_2d(np.array(self.A, dtype=float))
        B = np.array(self.B, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n):
            raise ValueError(f"A must be square, got {A.shape}")
        B = B.reshape(n, -1)
        c = np.zeros(n) if self.c is None else np.array(self.c, dtype=float).reshape(n)
        if not self.delta > 0:
            raise ValueError("sampling period must be positive")
        for name, arr in (("A", A), ("B", B), ("c", c)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            arr.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "delta", float(self.delta))

    @property
    def state_dim(self) -> int:
        return self.A.shape[0]

    @property
    def input_dim(self) -> int:
        return self.B.shape[1]

    def rhs(self, x, u):
        return np.asarray(x) @ self.A.T + np.asarray(u) @ self.B.T + self.c

    def rhs_interval(self, X: Interval, U: Interval) -> Interval:
        return matvec(self.A, X) + matvec(self.B, U) + self.c

    def jac_interval(self, X: Interval, U: Interval) -> Interval:
        J = np.broadcast_to(self.A, X.shape[:-1] + self.A.shape)
        return Interval(J, J)


def vanderpol_rhs(x, u, gamma: float = 1.0):
    """``x1' = x2``, ``x2' = gamma (1 - x1^2) x2 - x1 + u``."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    x1, x2 = x[..., 0], x[..., 1]
    u = u[..., 0] if u.ndim and u.shape[-1] == 1 else u
    return np.stack([x2, gamma * (1.0 - x1 * x1) * x2 - x1 + u], axis=-1)


def _vdp_interval(X: Interval, U: Interval, gamma: float) -> Interval:
    x1, x2 = X[..., 0], X[..., 1]
    f2 = gamma * ((1.0 - x1.sqr()) * x2) - x1 + U[..., 0]
    return Interval(np.stack([x2.lo, f2.lo], -1), np.stack([x2.hi, f2.hi], -1))


def _vdp_jac_interval(X: Interval, U: Interval, gamma: float) -> Interval:
    x1, x2 = X[..., 0], X[..., 1]
    zero = np.zeros(x1.shape)
    one = np.ones(x1.shape)
    j21 = -2.0 * gamma * (x1 * x2) - 1.0
    j22 = gamma * (1.0 - x1.sqr())
    lo = np.stack([np.stack([zero, one], -1), np.stack([j21.lo, j22.lo], -1)], -2)
    hi = np.stack([np.stack([zero, one], -1), np.stack([j21.hi, j22.hi], -1)], -2)
    return Interval(lo, hi)


_MODELS = {"vanderpol", "zero"}


@dataclass(frozen=True, eq=False)
class NonlinearSystem:
    """Named nonlinear vector field with a parameter record.

    ``vanderpol`` (parameter ``gamma``, default 1) is locally Lipschitz on any
    bounded set; ``zero`` is the constant field ``x' = 0`` used in tests.
    """

    model: str
    params: dict = field(default_factory=dict)
    delta: float = 0.1

    def __post_init__(self):
        if self.model not in _MODELS:
            raise ValueError(f"unknown model {self.model!r}; known: {sorted(_MODELS)}")
        if not self.delta > 0:
            raise ValueError("sampling period must be positive")
        object.__setattr__(self, "params", dict(self.params))

    @property
    def state_dim(self) -> int:
        return 2

    @property
    def input_dim(self) -> int:
        return 1

    @property
    def gamma(self) -> float:
        return float(self.params.get("gamma", 1.0))

    def rhs(self, x, u):
        if self.model == "zero":
            return np.zeros_like(np.asarray(x, dtype=float))
        return vanderpol_rhs(x, u, self.gamma)

    def rhs_interval(self, X: Interval, U: Interval) -> Interval:
        if self.model == "zero":
            z = np.zeros(X.shape)
            return Interval(z, z)
        return _vdp_interval(X, U, self.gamma)

    def jac_interval(self, X: Interval, U: Interval) -> Interval:
        if self.model == "zero":
            z = np.zeros(X.shape + (2,))
            return Interval(z, z)
        return _vdp_jac_interval(X, U, self.gamma)


def acc_system(v_front: float = 40.0, k: float = -0.2, delta: float = 0.1) -> LtiSystem:
    """Adaptive cruise control: ``s' = v_front - v``, ``v' = k v + u``."""
    return LtiSystem([[0.0, -1.0], [0.0, k]], [[0.0], [1.0]], [v_front, 0.0], delta)


def vanderpol_system(gamma: float = 1.0, delta: float = 0.1) -> NonlinearSystem:
    return NonlinearSystem("vanderpol", {"gamma": gamma}, delta)


def discretize_lti(sys: LtiSystem):
    """Exact zero-order-hold discretization ``(A_d, B_d, c_d)``.

    ``exp`` of the augmented generator ``[[A, B, c], [0, 0, 0]]`` carries
    ``e^{A delta}`` and both input integrals in its top block row.
    """
    n, m = sys.state_dim, sys.input_dim
    G = np.zeros((n + m + 1, n + m + 1))
    G[:n, :n] = sys.A
    G[:n, n : n + m] = sys.B
    G[:n, n + m] = sys.c
    E = expm(G * sys.delta)
    if not np.all(np.isfinite(E)):
        raise ValueError("discretization produced non-finite entries")
    return E[:n, :n], E[:n, n : n + m], E[:n, n + m]


@dataclass(frozen=True, eq=False)
class Trace:
    """Samples at every control-period boundary."""

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __len__(self):
        return len(self.times)

    def to_csv(self) -> str:
        n = self.states.shape[1]
        m = self.controls.shape[1]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{i + 1}" for i in range(n)] + [f"u{j + 1}" for j in range(m)])
        for t, x, u in zip(self.times, self.states, self.controls):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x] + [repr(float(v)) for v in u])
        return buf.getvalue()


def _rk4_period(sys, x, u, delta, micro):
    h = delta / micro
    for _ in range(micro):
        k1 = sys.rhs(x, u)
        k2 = sys.rhs(x + 0.5 * h * k1, u)
        k3 = sys.rhs(x + 0.5 * h * k2, u)
        k4 = sys.rhs(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
    return x


def simulate(sys, controller, x0, horizon: int, micro: int = 10) -> Trace:
    """Zero-order-hold closed-loop simulation with fixed-step RK4.

    ``x0`` may be a single state ``(n,)`` or a batch ``(k, n)``; batches are
    integrated together and returned as a ``Trace`` whose arrays carry the
    extra leading batch axis after time.
    """
    if micro < 1:
        raise ValueError("micro must be >= 1")
    x = np.array(x0, dtype=float)
    if not np.all(np.isfinite(x)):
        raise ValueError("initial state must be finite")
    if x.shape[-1] != sys.state_dim:
        raise ValueError(f"initial state has dimension {x.shape[-1]}, system has {sys.state_dim}")
    states, controls = [x], []
    for _ in range(horizon):
        u = controller(x)
        controls.append(u)
        x = _rk4_period(sys, x, u, sys.delta, micro)
        if not np.all(np.isfinite(x)) or np.max(np.linalg.norm(x, axis=-1)) > DIVERGENCE_NORM:
            raise DivergenceError(f"state diverged after {len(states)} periods")
        states.append(x)
    controls.append(controller(x))
    times = sys.delta * np.arange(horizon + 1)
    return Trace(times, np.array(states), np.array(controls))


def simulate_many(sys, controller, x0s, horizon: int, micro: int = 10):
    """Batch rollout that tolerates divergence.

    Returns ``(states, diverged)`` with ``states`` of shape
    ``(horizon + 1, k, n)``; rows of diverged samples are NaN from the period
    at which they left the divergence ball onward.
    """
    x = np.array(x0s, dtype=float).reshape(-1, sys.state_dim)
    diverged = np.zeros(len(x), dtype=bool)
    states = [x.copy()]
    for _ in range(horizon):
        safe_x = np.where(diverged[:, None], 0.0, x)
        u = controller(safe_x)
        with np.errstate(all="ignore"):
            x = _rk4_period(sys, safe_x, u, sys.delta, micro)
            bad = ~np.all(np.isfinite(x), axis=1) | (np.linalg.norm(x, axis=1) > DIVERGENCE_NORM)
        diverged |= bad
        x = np.where(diverged[:, None], np.nan, x)
        states.append(x.copy())
    return np.array(states), diverged
