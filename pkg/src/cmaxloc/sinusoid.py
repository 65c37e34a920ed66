"""Vectorized helpers for ``s(a) = d1*sin(a) + d2*cos(a) + d3``.

Coefficients are stored in the last axis of an array, ``coef[..., :3]``.
"""

from __future__ import annotations

import math

import numpy as np

TWO_PI = 2.0 * math.pi
HALF_PI = 0.5 * math.pi


def evaluate(coef, alpha):
    coef = np.asarray(coef, dtype=float)
    return coef[..., 0] * np.sin(alpha) + coef[..., 1] * np.cos(alpha) + coef[..., 2]


def amplitude_phase(coef) -> tuple[np.ndarray, np.ndarray]:
    """``(a1, a2)`` with ``s(a) = a1*sin(a + a2) + d3``."""
    coef = np.asarray(coef, dtype=float)
    return np.hypot(coef[..., 0], coef[..., 1]), np.arctan2(coef[..., 1], coef[..., 0])


def _has_interior(theta_lo, theta_hi, target):
    k = np.ceil((theta_lo - target) / TWO_PI)
    crit = target + TWO_PI * k
    return (crit > theta_lo) & (crit < theta_hi)


def value_range(coef, lo, hi) -> tuple[np.ndarray, np.ndarray]:
    """Exact ``(min, max)`` of the sinusoid over the closed interval ``[lo, hi]``.

    Only endpoints and interior extrema of ``sin(a + a2)`` are candidates, so
    no iteration is involved.  A degenerate interval returns the plain value.
    """
    coef = np.asarray(coef, dtype=float)
    a1, a2 = amplitude_phase(coef)
    d3 = coef[..., 2]
    v_lo = evaluate(coef, lo)
    v_hi = evaluate(coef, hi)
    mn = np.minimum(v_lo, v_hi)
    mx = np.maximum(v_lo, v_hi)
    th_lo = lo + a2
    th_hi = hi + a2
    mx = np.where(_has_interior(th_lo, th_hi, HALF_PI), np.maximum(mx, d3 + a1), mx)
    mn = np.where(_has_interior(th_lo, th_hi, -HALF_PI), np.minimum(mn, d3 - a1), mn)
    return mn, mx


def min_abs(coef, lo, hi) -> np.ndarray:
    """Exact minimum of ``|s|`` over ``[lo, hi]``."""
    mn, mx = value_range(coef, lo, hi)
    return np.where((mn <= 0.0) & (mx >= 0.0), 0.0, np.minimum(np.abs(mn), np.abs(mx)))


def max_abs(coef, lo, hi) -> np.ndarray:
    """Exact maximum of ``|s|`` over ``[lo, hi]``."""
    mn, mx = value_range(coef, lo, hi)
    return np.maximum(np.abs(mn), np.abs(mx))


def global_max_abs(coef) -> np.ndarray:
    coef = np.asarray(coef, dtype=float)
    return np.hypot(coef[..., 0], coef[..., 1]) + np.abs(coef[..., 2])


def roots(coef) -> list[float]:
    """Zeros of one sinusoid in [-pi, pi), sorted; empty when it never vanishes."""
    d1, d2, d3 = (float(c) for c in coef)
    a1 = math.hypot(d1, d2)
    if a1 == 0.0 or abs(d3) > a1:
        return []
    a2 = math.atan2(d2, d1)
    base = math.asin(max(-1.0, min(1.0, -d3 / a1)))
    out = {float((r + math.pi) % TWO_PI - math.pi) for r in (base - a2, math.pi - base - a2)}
    return sorted(out)
