"""Vectorized interval arithmetic on numpy arrays.

Every :class:`Interval` holds elementwise bounds ``lo <= hi`` of identical
shape, so a batch of boxes is one ``Interval`` of shape ``(nbox, n)``.
Results of arithmetic are widened outward by one ulp to absorb rounding.
"""

from __future__ import annotations

import numpy as np


def _down(x):
    return np.nextafter(x, -np.inf)


def _up(x):
    return np.nextafter(x, np.inf)


class Interval:
    __slots__ = ("lo", "hi")
    __array_priority__ = 100

    def __init__(self, lo, hi=None):
        lo = np.asarray(lo, dtype=float)
        hi = lo if hi is None else np.asarray(hi, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        self.lo = lo
        self.hi = hi

    @classmethod
    def point(cls, x):
        x = np.asarray(x, dtype=float)
        return _raw(x, x)

    @staticmethod
    def _coerce(other):
        return other if isinstance(other, Interval) else Interval.point(other)

    @property
    def shape(self):
        return self.lo.shape

    @property
    def mid(self):
        return 0.5 * (self.lo + self.hi)

    @property
    def rad(self):
        return 0.5 * (self.hi - self.lo)

    @property
    def width(self):
        return self.hi - self.lo

    def mag(self):
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def __getitem__(self, idx):
        return _raw(self.lo[idx], self.hi[idx])

    def __repr__(self):
        return f"Interval(lo={self.lo!r}, hi={self.hi!r})"

    def __add__(self, other):
        o = self._coerce(other)
        return _raw(_down(self.lo + o.lo), _up(self.hi + o.hi))

    __radd__ = __add__

    def __neg__(self):
        return _raw(-self.hi, -self.lo)

    def __sub__(self, other):
        o = self._coerce(other)
        return _raw(_down(self.lo - o.hi), _up(self.hi - o.lo))

    def __rsub__(self, other):
        return self._coerce(other) - self

    def __mul__(self, other):
        o = self._coerce(other)
        a, b = self.lo * o.lo, self.lo * o.hi
        c, d = self.hi * o.lo, self.hi * o.hi
        lo = np.minimum(np.minimum(a, b), np.minimum(c, d))
        hi = np.maximum(np.maximum(a, b), np.maximum(c, d))
        return _raw(_down(lo), _up(hi))

    __rmul__ = __mul__

    def sqr(self):
        lo2, hi2 = self.lo * self.lo, self.hi * self.hi
        straddle = (self.lo <= 0) & (self.hi >= 0)
        lo = np.where(straddle, 0.0, np.minimum(lo2, hi2))
        return _raw(np.maximum(_down(lo), 0.0), _up(np.maximum(lo2, hi2)))

    def tanh(self):
        return _raw(_down(np.tanh(self.lo)), _up(np.tanh(self.hi)))

    def tanh_slope(self):
        """Enclosure of ``1 - tanh(x)^2`` (maximal at 0, decreasing in ``|x|``)."""
        t = self.tanh()
        return 1.0 - t.sqr()

    def hull(self, other):
        o = self._coerce(other)
        return Interval(np.minimum(self.lo, o.lo), np.maximum(self.hi, o.hi))

    def contains(self, other) -> np.ndarray:
        o = self._coerce(other)
        return (self.lo <= o.lo) & (o.hi <= self.hi)

    def inflate(self, abs_eps, rel_eps=0.0):
        r = abs_eps + rel_eps * (self.hi - self.lo)
        return Interval(self.lo - r, self.hi + r)

    def sum(self, axis):
        return _raw(_down(self.lo.sum(axis=axis)), _up(self.hi.sum(axis=axis)))


def _raw(lo, hi) -> Interval:
    """Construct without conversion or broadcasting (inputs already agree)."""
    out = Interval.__new__(Interval)
    out.lo = lo
    out.hi = hi
    return out


def matvec(W: np.ndarray, x: Interval) -> Interval:
    """``W @ x`` for a point matrix ``W`` (m, n) and a batch of interval vectors ``(..., n)``."""
    c = x.mid @ W.T
    r = x.rad @ np.abs(W).T
    slack = np.abs(c) * 4 * np.finfo(float).eps + r * 4 * np.finfo(float).eps
    return _raw(_down(c - r - slack), _up(c + r + slack))


def imatvec(M: Interval, x: Interval) -> Interval:
    """Interval matrix (..., m, n) times interval vector (..., n)."""
    return (M * Interval(x.lo[..., None, :], x.hi[..., None, :])).sum(axis=-1)


def imatmul(A: Interval, B: Interval) -> Interval:
    """Interval matrix product (..., m, k) x (..., k, n)."""
    prod = Interval(A.lo[..., :, :, None], A.hi[..., :, :, None]) * Interval(
        B.lo[..., None, :, :], B.hi[..., None, :, :]
    )
    return prod.sum(axis=-2)
