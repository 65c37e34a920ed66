"""Globally optimal yaw search by 1-D branch and bound over TIM constraints."""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

import numpy as np

from . import sinusoid
from .errors import NoConsensus
from .tim import TimSet, YawInterval

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class RotationCandidate:
    alpha: float
    cardinality: int
    inliers: tuple = ()
    inlier_ids: frozenset = frozenset()
    expansions: int = 0
    evaluations: int = 0


@dataclass
class BnbNode:
    interval: YawInterval
    upper: int
    active: np.ndarray


@dataclass(frozen=True)
class BnbConfig:
    epsilon_alpha: float = 1e-4
    ransac_seeds: int = 10
    seed_width: float = 0.1
    use_cache: bool = True
    use_seeding: bool = False
    branch_factor: int = 2

    def __post_init__(self):
        if not self.epsilon_alpha > 0:
            raise ValueError("epsilon_alpha must be positive")
        if self.branch_factor < 2:
            raise ValueError("branch_factor must be >= 2")


def count_inliers(tims: TimSet, alpha: float) -> RotationCandidate:
    if len(tims) == 0:
        return RotationCandidate(float(alpha), 0)
    ok = np.flatnonzero(tims.satisfied(alpha))
    return RotationCandidate(
        float(alpha), int(ok.size), tuple(int(i) for i in ok),
        frozenset(tims.origins[i] for i in ok),
    )


def upper_bound(tims: TimSet, interval: YawInterval, active=None) -> tuple[int, np.ndarray]:
    """Optimistic inlier count over ``interval`` and the surviving constraint indices."""
    idx = np.arange(len(tims)) if active is None else np.asarray(active)
    if idx.size == 0:
        return 0, idx
    keep = idx[tims.relaxed_satisfied(interval.lo, interval.hi, idx)]
    return int(keep.size), keep


def seed_subsets(seeds: Iterable[float], width: float) -> list[YawInterval]:
    """Windows of ``width`` centred on each seed, split at the +-pi seam and merged."""
    if not width > 0:
        raise ValueError("width must be positive")
    if width >= TWO_PI:
        return [YawInterval.full()]
    raw: list[tuple[float, float]] = []
    for s in seeds:
        c = float(sinusoid_wrap(s))
        lo, hi = c - 0.5 * width, c + 0.5 * width
        if lo < -math.pi:
            raw += [(-math.pi, hi), (lo + TWO_PI, math.pi)]
        elif hi > math.pi:
            raw += [(lo, math.pi), (-math.pi, hi - TWO_PI)]
        else:
            raw.append((lo, hi))
    raw.sort()
    merged: list[list[float]] = []
    for lo, hi in raw:
        if merged and lo <= merged[-1][1]:
            merged[-1][1] = max(merged[-1][1], hi)
        else:
            merged.append([lo, hi])
    return [YawInterval(lo, hi) for lo, hi in merged]


def sinusoid_wrap(a: float) -> float:
    return (a + math.pi) % TWO_PI - math.pi


# ---------------------------------------------------------------------------
# exact status changes inside an interval

def _roots(coef: np.ndarray) -> np.ndarray:
    """Both zeros of each sinusoid row, NaN where there are none; shape ``(..., 2)``."""
    a1, a2 = sinusoid.amplitude_phase(coef)
    d3 = coef[..., 2]
    ok = (a1 > 0) & (np.abs(d3) <= a1)
    with np.errstate(invalid="ignore", divide="ignore"):
        base = np.arcsin(np.clip(-d3 / np.where(a1 > 0, a1, 1.0), -1.0, 1.0))
    r = np.stack([base - a2, math.pi - base - a2], axis=-1)
    r = (r + math.pi) % TWO_PI - math.pi
    return np.where(ok[..., None], r, np.nan)


def status_breakpoints(tims: TimSet, idx, lo: float = -math.pi, hi: float = math.pi) -> np.ndarray:
    """Sorted yaws in ``(lo, hi)`` where some constraint of ``idx`` may flip status.

    ``|d| - sum|g_k| - b`` is a single sinusoid between consecutive zeros of
    ``d`` and the ``g_k``; its zeros inside each such arc are the flips.
    """
    idx = np.asarray(idx)
    if idx.size == 0:
        return np.zeros(0)
    coef = tims.coef[idx]
    terms = tims.terms[idx]
    bound = tims.bound[idx]
    m, k = terms.shape[:2]

    cuts = _roots(np.concatenate([coef[:, None, :], terms], axis=1)).reshape(m, -1)
    cuts = np.sort(cuts, axis=1)
    q = cuts.shape[1]
    nv = np.sum(~np.isnan(cuts), axis=1)
    pos = np.arange(q)[None, :]
    nxt = np.where(pos + 1 < nv[:, None], pos + 1, 0)
    starts = cuts
    ends = np.take_along_axis(cuts, nxt, axis=1) + np.where(pos + 1 < nv[:, None], 0.0, TWO_PI)
    valid = pos < nv[:, None]
    none = nv == 0
    starts = np.where(none[:, None] & (pos == 0), -math.pi, starts)
    ends = np.where(none[:, None] & (pos == 0), math.pi, ends)
    valid |= none[:, None] & (pos == 0)

    mid = 0.5 * (starts + ends)
    mid = np.where(valid, mid, 0.0)
    s_d = np.sign(sinusoid.evaluate(coef[:, None, :], mid))
    h = s_d[..., None] * coef[:, None, :]
    if k:
        s_g = np.sign(sinusoid.evaluate(terms[:, None, :, :], mid[..., None]))
        h = h - np.einsum("maj,mjc->mac", s_g, terms)
    h = h.copy()
    h[..., 2] -= bound[:, None]
    r = _roots(h)
    rel = (r - starts[..., None]) % TWO_PI
    inside = valid[..., None] & ~np.isnan(r) & (rel < (ends - starts)[..., None])
    pts = r[inside]
    pts = pts[(pts > lo) & (pts < hi)]
    return np.unique(pts)


def _best_in_interval(tims: TimSet, idx, lo: float, hi: float) -> tuple[float, int, float]:
    """Exact best ``(alpha, count, residual_sum)`` over ``[lo, hi]`` restricted to ``idx``."""
    bps = status_breakpoints(tims, idx, lo, hi)
    edges = np.concatenate([[lo], bps, [hi]])
    cand = 0.5 * (edges[:-1] + edges[1:])
    best = (0.5 * (lo + hi), -1, math.inf)
    for a in cand:
        ok = tims.satisfied(a, idx)
        c = int(ok.sum())
        if c >= best[1]:
            res = float(tims.residuals(a, idx)[ok].sum())
            if c > best[1] or res < best[2]:
                best = (float(a), c, res)
    return best


def polish_alpha(tims: TimSet, alpha: float) -> float:
    """Canonical representative of the plateau (constant inlier set) containing ``alpha``."""
    if len(tims) == 0:
        return alpha
    idx = np.arange(len(tims))
    ref = tims.satisfied(alpha)
    bps = status_breakpoints(tims, idx)
    if bps.size == 0:
        return 0.0 if ref.all() or not ref.any() else alpha
    edges = np.concatenate([[-math.pi], bps, [math.pi]])
    j = int(np.clip(np.searchsorted(edges, alpha, side="right") - 1, 0, len(edges) - 2))

    def same(seg: int) -> bool:
        return bool(np.array_equal(tims.satisfied(0.5 * (edges[seg] + edges[seg + 1])), ref))

    if not same(j):
        return alpha
    a, b = j, j
    while a > 0 and same(a - 1):
        a -= 1
    while b < len(edges) - 2 and same(b + 1):
        b += 1
    return float(0.5 * (edges[a] + edges[b + 1]))


def exact_max_consensus(tims: TimSet) -> RotationCandidate:
    """Exhaustive stabbing over every status breakpoint on the circle."""
    alpha, _, _ = _best_in_interval(tims, np.arange(len(tims)), -math.pi, math.pi)
    return count_inliers(tims, alpha)


# ---------------------------------------------------------------------------

def bnb_search(
    tims: TimSet,
    config: BnbConfig = BnbConfig(),
    seeds: Optional[Sequence[tuple[float, int]]] = None,
    trace: Optional[Callable[[dict], None]] = None,
    min_cardinality: int = 2,
) -> RotationCandidate:
    """Best-first branch and bound for the yaw with the most satisfied TIMs.

    ``seeds`` are ``(alpha, cardinality)`` pairs from a cheap estimator; their
    yaws warm-start the incumbent and, with ``config.use_seeding``, restrict the
    search to windows around them.  Without seeding the result is globally
    optimal: terminal intervals are resolved exactly, not by their center.
    """
    if len(tims) == 0:
        raise NoConsensus("no TIM constraints")
    all_idx = np.arange(len(tims))
    n_exp = 0
    n_eval = 0

    best_alpha, best_card, best_res = 0.0, 0, math.inf

    def offer(alpha: float, card: int, res: float) -> None:
        nonlocal best_alpha, best_card, best_res
        if card > best_card or (card == best_card and res < best_res):
            best_alpha, best_card, best_res = alpha, card, res

    def evaluate_at(alpha: float, idx) -> None:
        nonlocal n_eval
        n_eval += 1
        ok = tims.satisfied(alpha, idx)
        offer(alpha, int(ok.sum()), float(tims.residuals(alpha, idx)[ok].sum()))

    for a, _ in seeds or ():
        evaluate_at(float(sinusoid_wrap(a)), all_idx)

    if config.use_seeding and seeds:
        roots = seed_subsets([a for a, _ in seeds], config.seed_width)
        if len(roots) == 1 and roots[0].width >= TWO_PI - 1e-12:
            roots = YawInterval.full().split(config.branch_factor)
    else:
        roots = YawInterval.full().split(config.branch_factor)

    heap: list = []
    counter = 0

    def push(interval: YawInterval, parent_active) -> None:
        nonlocal counter
        active = parent_active if config.use_cache else all_idx
        ub, keep = upper_bound(tims, interval, active)
        pruned = ub <= best_card
        if trace is not None:
            trace({"lo": interval.lo, "hi": interval.hi, "upper": ub, "pruned": pruned})
        if not pruned:
            counter += 1
            heapq.heappush(heap, (-ub, -interval.width, interval.lo, counter, BnbNode(interval, ub, keep)))

    for iv in roots:
        push(iv, all_idx)

    while heap:
        _, _, _, _, node = heapq.heappop(heap)
        if node.upper <= best_card:
            break
        n_exp += 1
        iv = node.interval
        if iv.width < config.epsilon_alpha:
            a, c, r = _best_in_interval(tims, node.active, iv.lo, iv.hi)
            n_eval += 1
            offer(a, c, r)
            continue
        evaluate_at(iv.center, node.active)
        for child in iv.split(config.branch_factor):
            push(child, node.active)

    if best_card < min_cardinality:
        raise NoConsensus(f"best yaw supports only {best_card} constraint(s)")
    alpha = polish_alpha(tims, best_alpha)
    cand = count_inliers(tims, alpha)
    if cand.cardinality < best_card:
        cand = count_inliers(tims, best_alpha)
    return RotationCandidate(
        cand.alpha, cand.cardinality, cand.inliers, cand.inlier_ids, n_exp, n_eval
    )


def trace_writer(fp) -> Callable[[dict], None]:
    """Trace callback writing one JSON object per line to ``fp``."""

    def write(rec: dict) -> None:
        fp.write(json.dumps({"stage": "rotation", **rec}) + "\n")

    return write
