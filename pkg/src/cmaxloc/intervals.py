"""Minimal vectorized interval arithmetic with McCormick products."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class Interval:
    lo: np.ndarray
    hi: np.ndarray

    # make numpy arrays defer to the reflected interval operators
    __array_ufunc__ = None

    @classmethod
    def point(cls, x) -> "Interval":
        x = np.asarray(x, dtype=float)
        return cls(x, x)

    @classmethod
    def around(cls, x, radius) -> "Interval":
        x = np.asarray(x, dtype=float)
        return cls(x - radius, x + radius)

    def __add__(self, other):
        if isinstance(other, Interval):
            return Interval(self.lo + other.lo, self.hi + other.hi)
        return Interval(self.lo + other, self.hi + other)

    __radd__ = __add__

    def __neg__(self):
        return Interval(-self.hi, -self.lo)

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, Interval):
            return mccormick_product(self, other)
        k = np.asarray(other, dtype=float)
        a, b = self.lo * k, self.hi * k
        return Interval(np.minimum(a, b), np.maximum(a, b))

    __rmul__ = __mul__

    def __truediv__(self, other):
        if not isinstance(other, Interval):
            other = Interval.point(other)
        return divide(self, other)

    def __getitem__(self, key) -> "Interval":
        return Interval(self.lo[key], self.hi[key])

    def straddles_zero(self) -> np.ndarray:
        return (self.lo <= 0.0) & (self.hi >= 0.0)

    def contains(self, x, tol: float = 0.0) -> np.ndarray:
        return (self.lo - tol <= x) & (x <= self.hi + tol)

    @property
    def width(self):
        return self.hi - self.lo


def mccormick_product(a: Interval, b: Interval) -> Interval:
    """Range of ``f = a*b`` from the McCormick under/over-estimators.

    The convex under-envelope ``max(al*b + bl*a - al*bl, ah*b + bh*a - ah*bh)``
    and concave over-envelope ``min(ah*b + bl*a - ah*bl, al*b + bh*a - al*bh)``
    attain their extremes over the box at its corners.
    """
    al, ah, bl, bh = a.lo, a.hi, b.lo, b.hi
    under, over = [], []
    for x in (al, ah):
        for y in (bl, bh):
            under.append(np.maximum(al * y + bl * x - al * bl, ah * y + bh * x - ah * bh))
            over.append(np.minimum(ah * y + bl * x - ah * bl, al * y + bh * x - al * bh))
    return Interval(np.minimum.reduce(under), np.maximum.reduce(over))


def divide(num: Interval, den: Interval) -> Interval:
    """Monotone interval quotient; the caller ensures ``den`` excludes zero."""
    if np.any(den.straddles_zero()):
        raise ZeroDivisionError("denominator interval contains zero")
    q = np.stack([num.lo / den.lo, num.lo / den.hi, num.hi / den.lo, num.hi / den.hi])
    return Interval(q.min(axis=0), q.max(axis=0))
