"""Translation-invariant measurements (TIMs).

Two bearings ``b1, b2`` and a world displacement ``dp`` that must lie in the
plane spanned by the bearings give the residual

    d(yaw) = (b1 x b2) . R(yaw) dp

which no longer depends on the translation.  For a pair of point
correspondences ``dp = p_i - p_j`` (the left null vector of the stacked
collinearity equations reduces to exactly this triple product); for a line
correspondence ``dp = p_start - p_end`` with the two endpoint bearings.
Because ``R(yaw)`` is affine in ``(cos yaw, sin yaw)``, so is ``d``.

``d`` is bilinear in the two bearings, so a pixel box of half-width ``n``
around each observation changes it by at most

    n1/fx |g1x| + n1/fy |g1y| + n2/fx |g2x| + n2/fy |g2y| + 2 n1 n2/(fx fy) |v_z|

with ``g1 = b2 x v``, ``g2 = v x b1`` and ``v = R(yaw) dp``.  Every term is the
absolute value of another sinusoid in yaw.  Coefficients are divided by a
per-constraint sensitivity scale so residuals are in normalized-plane units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Optional, Sequence

import numpy as np

from . import sinusoid
from .errors import DegenerateLine, DegeneratePair
from .geom import CameraIntrinsics, GravityPrior, YawRotationBasis, backproject

BoundMode = Literal["paper_min", "propagated"]
PIVOT_EPS = 1e-12
TRIVIAL_EPS = 1e-12


@dataclass(frozen=True, eq=False)
class PointCorrespondence:
    p: np.ndarray
    u: np.ndarray
    noise_bound: float = 2.0
    id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "p", np.asarray(self.p, dtype=float).reshape(3))
        object.__setattr__(self, "u", np.asarray(self.u, dtype=float).reshape(2))
        if not self.noise_bound > 0:
            raise ValueError("noise_bound must be positive")


@dataclass(frozen=True, eq=False)
class LineCorrespondence:
    p_start: np.ndarray
    p_end: np.ndarray
    u_start: np.ndarray
    u_end: np.ndarray
    noise_bound: float = 2.0
    id: int = 0

    def __post_init__(self):
        for name, n in (("p_start", 3), ("p_end", 3), ("u_start", 2), ("u_end", 2)):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(n))
        if np.array_equal(self.p_start, self.p_end) or np.array_equal(self.u_start, self.u_end):
            raise ValueError("line endpoints must be distinct")
        if not self.noise_bound > 0:
            raise ValueError("noise_bound must be positive")


@dataclass(frozen=True)
class YawInterval:
    lo: float
    hi: float

    def __post_init__(self):
        if not (-math.pi - 1e-12 <= self.lo <= self.hi <= math.pi + 1e-12):
            raise ValueError(f"invalid yaw interval [{self.lo}, {self.hi}]")

    @classmethod
    def full(cls) -> "YawInterval":
        return cls(-math.pi, math.pi)

    @property
    def width(self) -> float:
        return self.hi - self.lo

    @property
    def center(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def contains(self, alpha: float) -> bool:
        return self.lo <= alpha <= self.hi

    def split(self, parts: int = 2) -> list["YawInterval"]:
        edges = np.linspace(self.lo, self.hi, parts + 1)
        edges[0], edges[-1] = self.lo, self.hi
        return [YawInterval(float(a), float(b)) for a, b in zip(edges[:-1], edges[1:])]


@dataclass(frozen=True)
class SinusoidForm:
    a1: float
    a2: float
    d3: float

    def evaluate(self, alpha):
        return self.a1 * np.sin(alpha + self.a2) + self.d3


@dataclass(frozen=True, eq=False)
class TimConstraint:
    """One sinusoidal yaw constraint ``|d(yaw)| <= tolerance(yaw)``.

    ``bound`` is the constant part of the tolerance; ``bound_terms`` holds
    sinusoid coefficients whose absolute values are added to it (empty unless
    the bound was propagated from pixel noise).
    """

    d1: float
    d2: float
    d3: float
    bound: float
    origin: tuple
    bound_terms: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))

    @property
    def coef(self) -> np.ndarray:
        return np.array([self.d1, self.d2, self.d3])

    @property
    def is_trivial(self) -> bool:
        """All coefficients vanish, so the constraint holds at every yaw."""
        return math.hypot(self.d1, self.d2) + abs(self.d3) < TRIVIAL_EPS

    def sinusoid_form(self) -> SinusoidForm:
        a1, a2 = sinusoid.amplitude_phase(self.coef)
        return SinusoidForm(float(a1), float(a2), self.d3)

    def tolerance(self, alpha: float) -> float:
        return self.bound + float(np.abs(sinusoid.evaluate(self.bound_terms, alpha)).sum())

    def satisfied(self, alpha: float) -> bool:
        return abs(evaluate(self, alpha)) <= self.tolerance(alpha)


def evaluate(tim: TimConstraint, alpha):
    return tim.d1 * np.sin(alpha) + tim.d2 * np.cos(alpha) + tim.d3


def lower_bound_abs(tim: TimConstraint, interval: YawInterval) -> float:
    return float(sinusoid.min_abs(tim.coef, interval.lo, interval.hi))


def _cross_coef(a: np.ndarray, vc: np.ndarray, vs: np.ndarray, v0: np.ndarray) -> np.ndarray:
    """Sinusoid coefficients of ``a x v(yaw)``: shape ``(..., 3 components, 3 coefs)``."""
    return np.stack([np.cross(a, vs), np.cross(a, vc), np.cross(a, v0)], axis=-1)


def _coplanarity_arrays(b1, b2, dp, n1, n2, basis: YawRotationBasis, K: CameraIntrinsics, bound_mode: BoundMode):
    """Vectorized TIM coefficients for stacked ``(n, 3)`` inputs.

    Returns ``(coef, bound, terms, ok)``; rows with ``ok`` False have zero
    sensitivity and carry no information.
    """
    if bound_mode not in ("paper_min", "propagated"):
        raise ValueError(f"unknown bound_mode {bound_mode!r}")
    normal = np.cross(b1, b2)
    vc, vs, v0 = basis.apply(dp)
    coef = np.stack([np.sum(normal * vs, -1), np.sum(normal * vc, -1), np.sum(normal * v0, -1)], axis=-1)

    g1 = _cross_coef(b2, vc, vs, v0)          # b2 x v
    g2 = -_cross_coef(b1, vc, vs, v0)         # v x b1
    grads = np.stack([g1[:, 0], g1[:, 1], g2[:, 0], g2[:, 1]], axis=1)
    scale = sinusoid.global_max_abs(grads).sum(axis=1)
    ok = scale > 0
    scale = np.where(ok, scale, 1.0)

    n1 = np.asarray(n1, dtype=float)
    n2 = np.asarray(n2, dtype=float)
    if bound_mode == "paper_min":
        bound = np.minimum(n1, n2) / K.mean_focal * np.ones(len(coef))
        terms = np.zeros((len(coef), 0, 3))
    else:
        bound = np.zeros(len(coef))
        vz = np.stack([vs[:, 2], vc[:, 2], v0[:, 2]], axis=-1)
        w = np.stack(np.broadcast_arrays(
            n1 / K.fx, n1 / K.fy, n2 / K.fx, n2 / K.fy, 2.0 * n1 * n2 / (K.fx * K.fy)), axis=-1)
        w = np.broadcast_to(w, (len(coef), 5))
        terms = np.concatenate([grads, vz[:, None, :]], axis=1) * w[..., None] / scale[:, None, None]
    return coef / scale[:, None], bound, terms, ok


def _coplanarity_tim(
    b1: np.ndarray,
    b2: np.ndarray,
    dp: np.ndarray,
    n1: float,
    n2: float,
    basis: YawRotationBasis,
    K: CameraIntrinsics,
    bound_mode: BoundMode,
    origin: tuple,
) -> TimConstraint:
    coef, bound, terms, ok = _coplanarity_arrays(
        b1[None], b2[None], np.asarray(dp, dtype=float)[None], n1, n2, basis, K, bound_mode
    )
    if not ok[0]:
        raise DegeneratePair(f"zero sensitivity for {origin}")
    c = coef[0]
    return TimConstraint(float(c[0]), float(c[1]), float(c[2]), float(bound[0]), origin, terms[0])


def point_tim(
    ci: PointCorrespondence,
    cj: PointCorrespondence,
    prior: GravityPrior,
    K: CameraIntrinsics,
    bound_mode: BoundMode = "paper_min",
    basis: Optional[YawRotationBasis] = None,
) -> TimConstraint:
    """TIM from two point correspondences."""
    bi, bj = backproject(ci.u, K), backproject(cj.u, K)
    if max(abs(bi[0] - bj[0]), abs(bi[1] - bj[1])) < PIVOT_EPS:
        raise DegeneratePair(f"identical bearings for points {ci.id}, {cj.id}")
    basis = basis or YawRotationBasis.from_prior(prior)
    return _coplanarity_tim(
        bi, bj, ci.p - cj.p, ci.noise_bound, cj.noise_bound, basis, K, bound_mode,
        ("point", ci.id, cj.id),
    )


def line_tim(
    lk: LineCorrespondence,
    prior: GravityPrior,
    K: CameraIntrinsics,
    bound_mode: BoundMode = "paper_min",
    basis: Optional[YawRotationBasis] = None,
) -> TimConstraint:
    """TIM from a single line correspondence."""
    b1, b2 = backproject(lk.u_start, K), backproject(lk.u_end, K)
    if np.linalg.norm(np.cross(b1, b2)) < PIVOT_EPS:
        raise DegenerateLine(f"collinear endpoint bearings for line {lk.id}")
    basis = basis or YawRotationBasis.from_prior(prior)
    try:
        return _coplanarity_tim(
            b1, b2, lk.p_start - lk.p_end, lk.noise_bound, lk.noise_bound, basis, K,
            bound_mode, ("line", lk.id),
        )
    except DegeneratePair as exc:
        raise DegenerateLine(str(exc)) from exc


def select_pairs(n: int, pair_cap: Optional[int] = None) -> list[tuple[int, int]]:
    """All index pairs ``i < j``; a deterministic stride subsample beyond ``pair_cap``."""
    pairs = [(i, j) for i in range(n) for j in range(i + 1, n)]
    if pair_cap is None or len(pairs) <= pair_cap:
        return pairs
    step = len(pairs) / pair_cap
    return [pairs[int(k * step)] for k in range(pair_cap)]


class TimSet:
    """Constraints stacked into arrays for the yaw search.

    ``coef`` is ``(n, 3)``, ``bound`` is ``(n,)`` and ``terms`` is
    ``(n, k, 3)`` (``k`` = 0 for constant tolerances).
    """

    def __init__(self, constraints: Sequence[TimConstraint], skipped: int = 0):
        constraints = list(constraints)
        self.skipped = skipped
        n = len(constraints)
        self.coef = np.array([c.coef for c in constraints]).reshape(n, 3)
        self.bound = np.array([c.bound for c in constraints], dtype=float)
        k = max((len(c.bound_terms) for c in constraints), default=0)
        self.terms = np.zeros((n, k, 3))
        for i, c in enumerate(constraints):
            self.terms[i, : len(c.bound_terms)] = c.bound_terms
        self.origins = [c.origin for c in constraints]

    @classmethod
    def from_arrays(cls, coef, bound, terms, origins, skipped: int = 0) -> "TimSet":
        out = cls.__new__(cls)
        out.coef = np.asarray(coef, dtype=float).reshape(-1, 3)
        out.bound = np.asarray(bound, dtype=float)
        out.terms = np.asarray(terms, dtype=float).reshape(len(out.coef), -1, 3)
        out.origins = list(origins)
        out.skipped = skipped
        return out

    @property
    def constraints(self) -> list[TimConstraint]:
        return [
            TimConstraint(*map(float, self.coef[i]), float(self.bound[i]), self.origins[i], self.terms[i])
            for i in range(len(self))
        ]

    def __len__(self) -> int:
        return len(self.origins)

    def residuals(self, alpha: float, idx=None) -> np.ndarray:
        coef = self.coef if idx is None else self.coef[idx]
        return np.abs(sinusoid.evaluate(coef, alpha))

    def tolerances(self, alpha: float, idx=None) -> np.ndarray:
        bound = self.bound if idx is None else self.bound[idx]
        if self.terms.shape[1] == 0:
            return bound
        terms = self.terms if idx is None else self.terms[idx]
        return bound + np.abs(sinusoid.evaluate(terms, alpha)).sum(axis=-1)

    def satisfied(self, alpha: float, idx=None) -> np.ndarray:
        return self.residuals(alpha, idx) <= self.tolerances(alpha, idx)

    def relaxed_satisfied(self, lo: float, hi: float, idx=None) -> np.ndarray:
        """Optimistic test over ``[lo, hi]``: min |d| against max tolerance."""
        coef = self.coef if idx is None else self.coef[idx]
        bound = self.bound if idx is None else self.bound[idx]
        lb = sinusoid.min_abs(coef, lo, hi)
        if self.terms.shape[1]:
            terms = self.terms if idx is None else self.terms[idx]
            bound = bound + sinusoid.max_abs(terms, lo, hi).sum(axis=-1)
        return lb <= bound


def build_all_tims(
    points: Sequence[PointCorrespondence],
    lines: Sequence[LineCorrespondence],
    prior: GravityPrior,
    K: CameraIntrinsics,
    pair_cap: Optional[int] = None,
    bound_mode: BoundMode = "paper_min",
) -> TimSet:
    """Point-pair TIMs (``i < j``) followed by one TIM per line; degenerate ones are skipped."""
    basis = YawRotationBasis.from_prior(prior)
    coefs, bounds, terms, origins = [], [], [], []
    skipped = 0
    pairs = np.array(select_pairs(len(points), pair_cap), dtype=int).reshape(-1, 2)
    if len(pairs):
        B = backproject(np.array([c.u for c in points]), K)
        P = np.array([c.p for c in points])
        nb = np.array([c.noise_bound for c in points], dtype=float)
        i, j = pairs[:, 0], pairs[:, 1]
        piv = np.maximum(np.abs(B[i, 0] - B[j, 0]), np.abs(B[i, 1] - B[j, 1]))
        c, b, t, ok = _coplanarity_arrays(B[i], B[j], P[i] - P[j], nb[i], nb[j], basis, K, bound_mode)
        ok &= piv >= PIVOT_EPS
        skipped += int((~ok).sum())
        coefs.append(c[ok]); bounds.append(b[ok]); terms.append(t[ok])
        origins += [("point", points[a].id, points[b_].id) for a, b_ in pairs[ok]]
    if len(lines):
        Bs = backproject(np.array([c.u_start for c in lines]), K)
        Be = backproject(np.array([c.u_end for c in lines]), K)
        dp = np.array([c.p_start - c.p_end for c in lines])
        nb = np.array([c.noise_bound for c in lines], dtype=float)
        c, b, t, ok = _coplanarity_arrays(Bs, Be, dp, nb, nb, basis, K, bound_mode)
        ok &= np.linalg.norm(np.cross(Bs, Be), axis=1) >= PIVOT_EPS
        skipped += int((~ok).sum())
        coefs.append(c[ok]); bounds.append(b[ok]); terms.append(t[ok])
        origins += [("line", lines[k].id) for k in np.flatnonzero(ok)]
    if not origins:
        return TimSet([], skipped)
    return TimSet.from_arrays(np.vstack(coefs), np.concatenate(bounds), np.concatenate(terms), origins, skipped)
