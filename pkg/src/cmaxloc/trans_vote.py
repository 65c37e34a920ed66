"""Translation from pairwise closed-form hypotheses and per-axis interval voting.

With the rotation fixed, a point correspondence gives two linear equations
in ``t`` and a line correspondence gives one, so any pair holding at least
one point fixes ``t``.  Writing ``h = R p`` for the point, its depth ``w``
solves the pair and ``t = b * w - h`` where ``b`` is the point's bearing.
Pixel boxes of half-width ``n`` are pushed through these closed forms to get
per-axis containment intervals, which are then voted on.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from . import sinusoid
from .errors import DegeneratePair, DegeneratePairLine, NoConsensus, UnboundedHypothesis
from .geom import CameraIntrinsics, backproject
from .intervals import Interval
from .tim import LineCorrespondence, PointCorrespondence, select_pairs

BoxMode = Literal["mccormick", "vertex"]
PIVOT_EPS = 1e-12
AXES = {"x": 0, "y": 1, "z": 2}


@dataclass(frozen=True, eq=False)
class TranslationHypothesis:
    t_hat: np.ndarray
    lo: np.ndarray
    hi: np.ndarray
    members: tuple


# ---------------------------------------------------------------------------
# closed forms (vectorized over leading axes)

def _pp_pivot(b1: np.ndarray, b2: np.ndarray) -> np.ndarray:
    """0 (x) or 1 (y): the bearing difference with the larger magnitude."""
    return np.where(np.abs(b1[..., 1] - b2[..., 1]) >= np.abs(b1[..., 0] - b2[..., 0]), 1, 0)


def _pp_translation(b1, b2, h1, h2, c):
    b1c = np.take_along_axis(b1, c[..., None], -1)[..., 0]
    b2c = np.take_along_axis(b2, c[..., None], -1)[..., 0]
    h1c = np.take_along_axis(h1, c[..., None], -1)[..., 0]
    h2c = np.take_along_axis(h2, c[..., None], -1)[..., 0]
    w = (h1c - h2c + b2c * (h2[..., 2] - h1[..., 2])) / (b1c - b2c)
    return b1 * w[..., None] - h1


def _pl_normal(bs, be):
    return np.cross(bs, be)


def _pl_translation(b1, h1, bs, be, m):
    n = _pl_normal(bs, be)
    w = np.sum(n * (h1 - m), axis=-1) / np.sum(n * b1, axis=-1)
    return b1 * w[..., None] - h1


def solve_pair_point_point(ci: PointCorrespondence, cj: PointCorrespondence, R, K: CameraIntrinsics) -> np.ndarray:
    b1, b2 = backproject(ci.u, K), backproject(cj.u, K)
    if max(abs(b1[0] - b2[0]), abs(b1[1] - b2[1])) < PIVOT_EPS:
        raise DegeneratePair(f"parallel bearings for points {ci.id}, {cj.id}")
    R = np.asarray(R)
    return _pp_translation(b1, b2, R @ ci.p, R @ cj.p, _pp_pivot(b1, b2))


def solve_pair_point_line(ci: PointCorrespondence, lk: LineCorrespondence, R, K: CameraIntrinsics) -> np.ndarray:
    b1 = backproject(ci.u, K)
    bs, be = backproject(lk.u_start, K), backproject(lk.u_end, K)
    if abs(_pl_normal(bs, be) @ b1) < PIVOT_EPS:
        raise DegeneratePairLine(f"point {ci.id} bearing lies in the plane of line {lk.id}")
    R = np.asarray(R)
    return _pl_translation(b1, R @ ci.p, bs, be, R @ lk.p_start)


# ---------------------------------------------------------------------------
# containment boxes

def _bearing_box(b: np.ndarray, noise, K: CameraIntrinsics) -> tuple[Interval, Interval]:
    noise = np.asarray(noise, dtype=float)
    return Interval.around(b[..., 0], noise / K.fx), Interval.around(b[..., 1], noise / K.fy)


def _pick(v, c):
    """Component ``c`` (0 or 1, per row) of an array or interval of 3-vectors."""
    if isinstance(v, Interval):
        return Interval(_pick(v.lo, c), _pick(v.hi, c))
    return np.where(c == 0, v[..., 0], v[..., 1])


def _as_interval(h, yaw):
    """Rotated points as intervals when they carry sinusoid parts over a yaw window."""
    if yaw is None:
        return h
    mn, mx = sinusoid.value_range(h, yaw[0], yaw[1])
    return Interval(mn, mx)


def _pp_box_mccormick(b1, b2, n1, n2, h1, h2, c, K, yaw=None):
    b1x, b1y = _bearing_box(b1, n1, K)
    b2x, b2y = _bearing_box(b2, n2, K)
    b1c = Interval(_pick(np.stack([b1x.lo, b1y.lo], -1), c), _pick(np.stack([b1x.hi, b1y.hi], -1), c))
    b2c = Interval(_pick(np.stack([b2x.lo, b2y.lo], -1), c), _pick(np.stack([b2x.hi, b2y.hi], -1), c))
    h1, h2 = _as_interval(h1, yaw), _as_interval(h2, yaw)
    h1c = _pick(h1, c)
    h2c = _pick(h2, c)
    den = b1c - b2c
    bad = den.straddles_zero()
    den = Interval(np.where(bad, 1.0, den.lo), np.where(bad, 1.0, den.hi))
    w = ((h1c - h2c) + b2c * (h2[..., 2] - h1[..., 2])) / den
    tx = b1x * w - h1[..., 0]
    ty = b1y * w - h1[..., 1]
    tz = w - h1[..., 2]
    lo = np.stack([tx.lo, ty.lo, tz.lo], axis=-1)
    hi = np.stack([tx.hi, ty.hi, tz.hi], axis=-1)
    return lo, hi, bad


def _pl_box_mccormick(b1, n1, h1, bs, be, nl, m, K, yaw=None):
    h1, m = _as_interval(h1, yaw), _as_interval(m, yaw)
    b1x, b1y = _bearing_box(b1, n1, K)
    bsx, bsy = _bearing_box(bs, nl, K)
    bex, bey = _bearing_box(be, nl, K)
    nx = bsy - bey
    ny = bex - bsx
    nz = bsx * bey - bex * bsy
    d = h1 - m
    num = nx * d[..., 0] + ny * d[..., 1] + nz * d[..., 2]
    den = nx * b1x + ny * b1y + nz
    bad = den.straddles_zero()
    den = Interval(np.where(bad, 1.0, den.lo), np.where(bad, 1.0, den.hi))
    w = num / den
    tx = b1x * w - h1[..., 0]
    ty = b1y * w - h1[..., 1]
    tz = w - h1[..., 2]
    lo = np.stack([tx.lo, ty.lo, tz.lo], axis=-1)
    hi = np.stack([tx.hi, ty.hi, tz.hi], axis=-1)
    return lo, hi, bad


def _corner_offsets(nvars: int) -> np.ndarray:
    return np.array(list(itertools.product((-1.0, 1.0), repeat=nvars)))


def _vertex_range(fn, yaw, *h):
    """Per-vertex extremes of ``fn(*h)``, which is linear in the rotated points ``h``."""
    if yaw is None:
        t = fn(*h)
        return t, t
    parts = [fn(*(x[..., k] for x in h)) for k in range(3)]
    return sinusoid.value_range(np.stack(parts, axis=-1), yaw[0], yaw[1])


def _pp_box_vertex(b1, b2, n1, n2, h1, h2, c, K, yaw=None):
    # t is linear-fractional in every bearing coordinate separately, so its
    # extremes over the box sit on vertices once the denominator keeps its sign.
    off = _corner_offsets(4)[:, None, :]
    r = np.stack([n1 / K.fx, n1 / K.fy, n2 / K.fx, n2 / K.fy], axis=-1)[None]
    v = np.stack([b1[..., 0], b1[..., 1], b2[..., 0], b2[..., 1]], axis=-1)[None] + off * r
    ones = np.ones(v.shape[:-1])
    vb1 = np.stack([v[..., 0], v[..., 1], ones], axis=-1)
    vb2 = np.stack([v[..., 2], v[..., 3], ones], axis=-1)
    den = np.where(c == 0, v[..., 0] - v[..., 2], v[..., 1] - v[..., 3])
    bad = (den.min(axis=0) <= 0) & (den.max(axis=0) >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        cc = np.broadcast_to(c, den.shape)
        mn, mx = _vertex_range(lambda a, b: _pp_translation(vb1, vb2, a, b, cc), yaw, h1[None], h2[None])
    return mn.min(axis=0), mx.max(axis=0), bad


def _pl_box_vertex(b1, n1, h1, bs, be, nl, m, K, yaw=None):
    off = _corner_offsets(6)[:, None, :]
    r = np.stack([n1 / K.fx, n1 / K.fy, nl / K.fx, nl / K.fy, nl / K.fx, nl / K.fy], axis=-1)[None]
    v = np.stack([b1[..., 0], b1[..., 1], bs[..., 0], bs[..., 1], be[..., 0], be[..., 1]], axis=-1)[None]
    v = v + off * r
    ones = np.ones(v.shape[:-1])
    vb1 = np.stack([v[..., 0], v[..., 1], ones], axis=-1)
    vbs = np.stack([v[..., 2], v[..., 3], ones], axis=-1)
    vbe = np.stack([v[..., 4], v[..., 5], ones], axis=-1)
    den = np.sum(_pl_normal(vbs, vbe) * vb1, axis=-1)
    bad = (den.min(axis=0) <= 0) & (den.max(axis=0) >= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        mn, mx = _vertex_range(lambda a, b: _pl_translation(vb1, a, vbs, vbe, b), yaw, h1[None], m[None])
    return mn.min(axis=0), mx.max(axis=0), bad


def _pp_box(box_mode, b1, b2, n1, n2, h1, h2, K, yaw=None):
    """Point-pair boxes that hold whichever pivot the noisy bearings select.

    Where the pixel boxes allow both pivots, the boxes of the two pivot
    forms are joined so the box covers the solver's output everywhere.
    """
    fn = _pp_box_vertex if box_mode == "vertex" else _pp_box_mccormick
    c = _pp_pivot(b1, b2)
    lo, hi, bad = fn(b1, b2, n1, n2, h1, h2, c, K, yaw)
    ex, ey = (n1 + n2) / K.fx, (n1 + n2) / K.fy
    gap = np.abs(b1[..., 1] - b2[..., 1]) - np.abs(b1[..., 0] - b2[..., 0])
    both = np.abs(gap) <= ex + ey
    if both.any():
        lo2, hi2, bad2 = fn(b1, b2, n1, n2, h1, h2, 1 - c, K, yaw)
        lo = np.where(both[..., None], np.minimum(lo, lo2), lo)
        hi = np.where(both[..., None], np.maximum(hi, hi2), hi)
        bad = bad | (both & bad2)
    return lo, hi, bad


def bound_hypothesis(
    ci: PointCorrespondence,
    cj,
    R,
    K: CameraIntrinsics,
    box_mode: BoxMode = "mccormick",
) -> tuple[np.ndarray, np.ndarray]:
    """Per-axis ``(lo, hi)`` containing every ``t`` reachable by in-bound pixel noise.

    ``cj`` is a point or a line correspondence.  Raises
    :class:`UnboundedHypothesis` when a denominator can vanish inside the box.
    """
    R = np.asarray(R)
    # the box builders work on batches; run this pair as a batch of one
    b1 = backproject(ci.u, K)[None]
    h1 = (R @ ci.p)[None]
    n1 = np.array([ci.noise_bound], dtype=float)
    nj = np.array([cj.noise_bound], dtype=float)
    if isinstance(cj, LineCorrespondence):
        bs, be = backproject(cj.u_start, K)[None], backproject(cj.u_end, K)[None]
        fn = _pl_box_vertex if box_mode == "vertex" else _pl_box_mccormick
        lo, hi, bad = fn(b1, n1, h1, bs, be, nj, (R @ cj.p_start)[None], K)
    else:
        b2 = backproject(cj.u, K)[None]
        lo, hi, bad = _pp_box(box_mode, b1, b2, n1, nj, h1, (R @ cj.p)[None], K)
    if bool(np.asarray(bad).any()):
        raise UnboundedHypothesis("denominator interval straddles zero")
    return np.asarray(lo).reshape(3), np.asarray(hi).reshape(3)


# ---------------------------------------------------------------------------

class HypothesisSet:
    """Translation hypotheses stacked into arrays.

    ``keys`` lists correspondence keys ``("point", id)`` / ``("line", id)``;
    ``member_codes[k]`` indexes the two keys behind hypothesis ``k``.
    """

    def __init__(self, t_hat, lo, hi, members: Sequence[tuple], skipped: int = 0):
        self.t_hat = np.asarray(t_hat, dtype=float).reshape(-1, 3)
        self.lo = np.asarray(lo, dtype=float).reshape(-1, 3)
        self.hi = np.asarray(hi, dtype=float).reshape(-1, 3)
        self.members = list(members)
        self.skipped = skipped
        self.keys = sorted({m for pair in self.members for m in pair})
        index = {k: i for i, k in enumerate(self.keys)}
        self.member_codes = np.array(
            [[index[a], index[b]] for a, b in self.members], dtype=int
        ).reshape(-1, 2)

    def __len__(self) -> int:
        return len(self.members)

    def __getitem__(self, k: int) -> TranslationHypothesis:
        return TranslationHypothesis(self.t_hat[k], self.lo[k], self.hi[k], self.members[k])

    @classmethod
    def from_list(cls, hyps: Sequence[TranslationHypothesis]) -> "HypothesisSet":
        return cls(
            [h.t_hat for h in hyps], [h.lo for h in hyps], [h.hi for h in hyps],
            [h.members for h in hyps],
        )

    def subset(self, idx) -> "HypothesisSet":
        idx = np.asarray(idx, dtype=int)
        return HypothesisSet(self.t_hat[idx], self.lo[idx], self.hi[idx],
                             [self.members[i] for i in idx])

    def unique_count(self, idx) -> int:
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return 0
        return int(np.unique(self.member_codes[idx].ravel()).size)

    def consensus_keys(self, idx) -> frozenset:
        return frozenset(self.keys[c] for c in np.unique(self.member_codes[np.asarray(idx, dtype=int)].ravel()))


def build_hypotheses(
    points: Sequence[PointCorrespondence],
    lines: Sequence[LineCorrespondence],
    R,
    K: CameraIntrinsics,
    pair_cap: Optional[int] = None,
    box_mode: BoxMode = "mccormick",
    yaw_window: Optional[tuple] = None,
    consistent: Optional[frozenset] = None,
) -> HypothesisSet:
    """All point-point (``i < j``) and point-line hypotheses with their boxes.

    ``yaw_window = (basis, lo, hi)`` widens every box to hold for any yaw in
    ``[lo, hi]`` (``basis`` is the :class:`YawRotationBasis` of the prior);
    point estimates still use ``R``.

    ``consistent`` optionally restricts generation to point pairs
    ``("point", id_i, id_j)`` and lines ``("line", id)`` listed in it, for
    example the constraints satisfied at the estimated yaw.
    """
    R = np.asarray(R)
    yaw = None
    if yaw_window is not None:
        basis, ylo, yhi = yaw_window
        yaw = (ylo, yhi)

        def rotated(X):
            cos_p, sin_p, const_p = basis.apply(X)
            return np.stack([sin_p, cos_p, const_p], axis=-1)
    t_all, lo_all, hi_all, members = [], [], [], []
    skipped = 0
    pts_b = backproject(np.array([p.u for p in points]).reshape(-1, 2), K)
    pts_h = np.array([p.p for p in points]).reshape(-1, 3) @ R.T
    pts_n = np.array([p.noise_bound for p in points], dtype=float)

    pairs = np.array(select_pairs(len(points), pair_cap), dtype=int).reshape(-1, 2)
    if consistent is not None and len(pairs):
        keep = [("point", points[a].id, points[b].id) in consistent for a, b in pairs]
        pairs = pairs[np.array(keep, dtype=bool)]
    line_ok = np.ones(len(lines), dtype=bool)
    if consistent is not None:
        line_ok = np.array([("line", l.id) in consistent for l in lines], dtype=bool)
    if len(pairs):
        i, j = pairs[:, 0], pairs[:, 1]
        b1, b2 = pts_b[i], pts_b[j]
        c = _pp_pivot(b1, b2)
        piv = np.maximum(np.abs(b1[:, 0] - b2[:, 0]), np.abs(b1[:, 1] - b2[:, 1]))
        with np.errstate(divide="ignore", invalid="ignore"):
            t = _pp_translation(b1, b2, pts_h[i], pts_h[j], c)
            if yaw is None:
                h1, h2 = pts_h[i], pts_h[j]
            else:
                hp = rotated(np.array([p.p for p in points]))
                h1, h2 = hp[i], hp[j]
            lo, hi, bad = _pp_box(box_mode, b1, b2, pts_n[i], pts_n[j], h1, h2, K, yaw)
        ok = (piv >= PIVOT_EPS) & ~bad & np.isfinite(lo).all(1) & np.isfinite(hi).all(1)
        skipped += int((~ok).sum())
        for k in np.flatnonzero(ok):
            members.append((("point", points[i[k]].id), ("point", points[j[k]].id)))
        t_all.append(t[ok]); lo_all.append(lo[ok]); hi_all.append(hi[ok])

    if len(points) and len(lines):
        ln_s = backproject(np.array([l.u_start for l in lines]), K)
        ln_e = backproject(np.array([l.u_end for l in lines]), K)
        ln_m = np.array([l.p_start for l in lines]) @ R.T
        ln_n = np.array([l.noise_bound for l in lines], dtype=float)
        i, k = np.meshgrid(np.arange(len(points)), np.flatnonzero(line_ok), indexing="ij")
        i, k = i.ravel(), k.ravel()
        b1 = pts_b[i]
        den = np.sum(_pl_normal(ln_s[k], ln_e[k]) * b1, axis=-1)
        fn = _pl_box_vertex if box_mode == "vertex" else _pl_box_mccormick
        with np.errstate(divide="ignore", invalid="ignore"):
            t = _pl_translation(b1, pts_h[i], ln_s[k], ln_e[k], ln_m[k])
            if yaw is None:
                h1, m = pts_h[i], ln_m[k]
            else:
                h1 = rotated(np.array([p.p for p in points]))[i]
                m = rotated(np.array([l.p_start for l in lines]))[k]
            lo, hi, bad = fn(b1, pts_n[i], h1, ln_s[k], ln_e[k], ln_n[k], m, K, yaw)
        ok = (np.abs(den) >= PIVOT_EPS) & ~bad & np.isfinite(lo).all(1) & np.isfinite(hi).all(1)
        skipped += int((~ok).sum())
        for q in np.flatnonzero(ok):
            members.append((("point", points[i[q]].id), ("line", lines[k[q]].id)))
        t_all.append(t[ok]); lo_all.append(lo[ok]); hi_all.append(hi[ok])

    if not members:
        return HypothesisSet(np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3)), [], skipped)
    return HypothesisSet(np.vstack(t_all), np.vstack(lo_all), np.vstack(hi_all), members, skipped)


# ---------------------------------------------------------------------------
# voting

class AxisConsensusMap:
    """Cells of the sorted-endpoint arrangement on one axis.

    Cell ``i`` spans ``[cell_lo[i], cell_hi[i]]``; its members are the
    hypotheses whose interval contains it.  Zero-width cells are omitted.
    ``counts`` are unique correspondences per cell, ``widths`` the summed
    member interval widths.
    """

    def __init__(self, breakpoints, cell_lo, cell_hi, counts, widths, index, start, stop):
        self.breakpoints = breakpoints
        self.cell_lo = cell_lo
        self.cell_hi = cell_hi
        self.counts = counts
        self.widths = widths
        self._index = index
        self._start = start
        self._stop = stop

    def __len__(self) -> int:
        return len(self.counts)

    def members(self, i: int) -> np.ndarray:
        return self._index[(self._start <= i) & (i < self._stop)]

    @property
    def cells(self) -> list:
        """``(lo, hi, members)`` for every cell."""
        return [(float(self.cell_lo[i]), float(self.cell_hi[i]), self.members(i)) for i in range(len(self))]

    def maximal(self) -> np.ndarray:
        """Mask of cells whose member set is not a strict subset of a neighbour's.

        A cell is dominated on the left when no interval starts at its lower
        edge and on the right when none ends at its upper edge.
        """
        n = len(self)
        starts = np.bincount(self._start, minlength=n + 1)
        stops = np.bincount(self._stop, minlength=n + 1)
        i = np.arange(n)
        return (starts[i] > 0) & (stops[i + 1] > 0)

    def ranked(self) -> np.ndarray:
        """Cell indices by decreasing count, then summed member width, then position."""
        return np.lexsort((np.arange(len(self)), self.widths, -self.counts))


def vote_axis(hyps: HypothesisSet, axis, members=None) -> AxisConsensusMap:
    """Sweep the sorted interval endpoints on one axis and count each cell's support."""
    ax = AXES.get(axis, axis)
    idx = np.arange(len(hyps)) if members is None else np.asarray(members, dtype=int)
    lo, hi = hyps.lo[idx, ax], hyps.hi[idx, ax]
    omega = np.sort(np.concatenate([lo, hi]))
    xs = np.unique(omega)
    n_cells = max(len(xs) - 1, 0)
    s = np.searchsorted(xs, lo)
    e = np.searchsorted(xs, hi)
    # per-correspondence coverage depth by prefix sums over cell events
    codes = hyps.member_codes[idx]
    nk = len(hyps.keys)
    size = (n_cells + 1) * nk
    depth = np.zeros(size, dtype=np.int64)
    for col in (0, 1):
        depth += np.bincount(s * nk + codes[:, col], minlength=size)
        depth -= np.bincount(e * nk + codes[:, col], minlength=size)
    depth = depth.reshape(n_cells + 1, nk)
    counts = (np.cumsum(depth, axis=0)[:n_cells] > 0).sum(axis=1)
    dw = np.bincount(s, hi - lo, minlength=n_cells + 1) - np.bincount(e, hi - lo, minlength=n_cells + 1)
    widths = np.cumsum(dw)[:n_cells]
    return AxisConsensusMap(omega, xs[:-1], xs[1:], counts.astype(int), widths, idx, s, e)


@dataclass(frozen=True)
class TranslationResult:
    t: np.ndarray
    consensus_ids: frozenset
    cardinality: int
    members: tuple = ()


def _result(hyps: HypothesisSet, members) -> TranslationResult:
    members = np.asarray(members, dtype=int)
    lo = hyps.lo[members].max(axis=0)
    hi = hyps.hi[members].min(axis=0)
    ids = hyps.consensus_keys(members)
    return TranslationResult(0.5 * (lo + hi), ids, len(ids), tuple(int(m) for m in members))


def dimension_wise_vote(hyps: HypothesisSet) -> TranslationResult:
    """Vote x over everything, then y and z inside the winning cell's members."""
    if len(hyps) == 0:
        raise NoConsensus("no translation hypotheses")
    members = np.arange(len(hyps))
    for axis in (0, 1, 2):
        amap = vote_axis(hyps, axis, members)
        if not len(amap):
            raise NoConsensus("voting produced no cell")
        members = amap.members(amap.ranked()[0])
    return _result(hyps, members)


def _top_cell(hyps: HypothesisSet, axis: int, idx: np.ndarray):
    """First cell of ``vote_axis(hyps, axis, idx).ranked()`` as ``(count, members, (lo, hi))``.

    Same sweep without building the full map; the innermost voting stage
    calls this once per candidate cell pair.
    """
    m = len(idx)
    if m == 0:
        return 0, idx, (np.nan, np.nan)
    lo, hi = hyps.lo[idx, axis], hyps.hi[idx, axis]
    ends = np.concatenate([lo, hi])
    order = np.argsort(ends, kind="stable")
    srt = ends[order]
    new = np.empty(2 * m, dtype=bool)
    new[0] = True
    np.not_equal(srt[1:], srt[:-1], out=new[1:])
    xs = srt[new]
    n_cells = len(xs) - 1
    if n_cells <= 0:
        return 0, idx[:0], (np.nan, np.nan)
    pos = np.empty(2 * m, dtype=np.int64)
    pos[order] = np.cumsum(new) - 1
    s, e = pos[:m], pos[m:]
    # merge each correspondence's intervals into a disjoint union, then count
    # how many unions cover each cell; offsetting by key keeps unions apart
    span = n_cells + 1
    codes = hyps.member_codes[idx].T.ravel()
    ks = np.concatenate([s, s]) + codes * span
    ke = np.concatenate([e, e]) + codes * span
    order = np.argsort(ks, kind="stable")
    ks, ke = ks[order], ke[order]
    reach = np.maximum.accumulate(ke)
    head = np.empty(len(ks), dtype=bool)
    head[0] = True
    np.greater(ks[1:], reach[:-1], out=head[1:])
    tail = np.append(np.flatnonzero(head)[1:] - 1, len(ks) - 1)
    diff = (np.bincount(ks[head] % span, minlength=span)
            - np.bincount(reach[tail] - codes[order][tail] * span, minlength=span))
    counts = np.cumsum(diff)[:n_cells]
    w = hi - lo
    widths = np.cumsum(np.bincount(s, w, minlength=n_cells + 1) - np.bincount(e, w, minlength=n_cells + 1))[:n_cells]
    top = np.flatnonzero(counts == counts.max())
    i = int(top[np.argmin(widths[top])])
    return int(counts[i]), idx[(s <= i) & (i < e)], (float(xs[i]), float(xs[i + 1]))


def _tiebreak_width(hyps: HypothesisSet, members) -> float:
    return float((hyps.hi[members] - hyps.lo[members]).sum())



def prioritized_progressive_vote(
    hyps: HypothesisSet,
    cutoff: bool = True,
    trace: Optional[Callable[[dict], None]] = None,
    skip_dominated: bool = True,
) -> TranslationResult:
    """Nested x -> y -> z voting with incumbent cutoffs; returns the best 3-D cell.

    x-cells are visited by decreasing support and each one is refined by a
    y-vote over its members, then a z-vote.  Cells whose members are a strict
    subset of a neighbouring cell's cannot hold more support and are skipped
    when ``skip_dominated``.  ``cutoff=False, skip_dominated=False`` visits
    every (x, y) cell pair (reference mode).
    """
    if len(hyps) == 0:
        raise NoConsensus("no translation hypotheses")
    best_card, best_members, best_width = 0, None, np.inf

    def order(amap: AxisConsensusMap) -> np.ndarray:
        ranked = amap.ranked()
        if skip_dominated:
            ranked = ranked[amap.maximal()[ranked]]
        return ranked

    sx = vote_axis(hyps, 0)
    for ix in order(sx):
        if cutoff and sx.counts[ix] < best_card:
            break
        sy = vote_axis(hyps, 1, sx.members(ix))
        for iy in order(sy):
            if cutoff and sy.counts[iy] < best_card:
                break
            card, members, z_cell = _top_cell(hyps, 2, sy.members(iy))
            if card == 0:
                continue
            width = _tiebreak_width(hyps, members)
            if card > best_card or (card == best_card and width < best_width):
                best_card, best_members, best_width = card, members, width
                if trace is not None:
                    trace({"stage": "translation",
                           "x_cell": [float(sx.cell_lo[ix]), float(sx.cell_hi[ix])],
                           "y_cell": [float(sy.cell_lo[iy]), float(sy.cell_hi[iy])],
                           "z_cell": list(z_cell),
                           "cardinality": card})
    if best_members is None:
        raise NoConsensus("voting produced no cell")
    return _result(hyps, best_members)
