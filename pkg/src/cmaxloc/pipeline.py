"""End-to-end solver: yaw by branch and bound, translation by voting, then refinement."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable, Literal, Optional, Sequence

import numpy as np

from . import sinusoid
from .errors import DegenerateLine, DegeneratePair, DegeneratePairLine, InsufficientInput, NoConsensus
from .geom import (
    DEPTH_EPS,
    CameraIntrinsics,
    GravityPrior,
    Pose,
    YawRotationBasis,
    build_rotation,
    wrap_angle,
)
from .rot_bnb import BnbConfig, bnb_search
from .tim import LineCorrespondence, PointCorrespondence, build_all_tims, line_tim, point_tim
from .trans_vote import (
    build_hypotheses,
    dimension_wise_vote,
    prioritized_progressive_vote,
    solve_pair_point_line,
    solve_pair_point_point,
)

VotingMode = Literal["prioritized", "dimension_wise"]
LINE_SLACK = math.sqrt(2.0)


@dataclass(frozen=True)
class SolverConfig:
    bnb: BnbConfig = field(default_factory=BnbConfig)
    voting_mode: VotingMode = "prioritized"
    bound_mode: str = "propagated"
    box_mode: str = "vertex"
    refine_iters: int = 50
    refine_tol: float = 1e-10
    rng_seed: int = 0
    ransac_iterations: int = 200
    pair_cap: Optional[int] = None
    yaw_margin: float = 0.0
    rotation_filter: bool = True
    expand_rounds: int = 3

    def __post_init__(self):
        if self.refine_iters < 0:
            raise ValueError("refine_iters must be >= 0")
        if self.voting_mode not in ("prioritized", "dimension_wise"):
            raise ValueError(f"unknown voting mode {self.voting_mode!r}")
        if self.bound_mode not in ("paper_min", "propagated"):
            raise ValueError(f"unknown bound mode {self.bound_mode!r}")
        if self.yaw_margin < 0:
            raise ValueError("yaw_margin must be >= 0")
        if self.expand_rounds < 0:
            raise ValueError("expand_rounds must be >= 0")
        if self.box_mode not in ("mccormick", "vertex"):
            raise ValueError(f"unknown box mode {self.box_mode!r}")


@dataclass(frozen=True, eq=False)
class LocalizationResult:
    pose: Pose
    alpha: float
    consensus_point_ids: frozenset
    consensus_line_ids: frozenset
    stage_timings: dict = field(default_factory=dict)
    rotation_cardinality: int = 0
    translation_cardinality: int = 0
    trace: Optional[list] = None

    @property
    def cardinality(self) -> int:
        return len(self.consensus_point_ids) + len(self.consensus_line_ids)


# ---------------------------------------------------------------------------
# residuals

def _point_arrays(points: Sequence[PointCorrespondence]):
    P = np.array([c.p for c in points]).reshape(-1, 3)
    U = np.array([c.u for c in points]).reshape(-1, 2)
    n = np.array([c.noise_bound for c in points], dtype=float)
    return P, U, n


def _line_arrays(lines: Sequence[LineCorrespondence], K: CameraIntrinsics):
    """World endpoints ``(m, 2, 3)``, unit-normal image lines ``(m, 3)`` and bounds."""
    Pw = np.array([[c.p_start, c.p_end] for c in lines]).reshape(-1, 2, 3)
    a = np.array([[*c.u_start, 1.0] for c in lines]).reshape(-1, 3)
    b = np.array([[*c.u_end, 1.0] for c in lines]).reshape(-1, 3)
    ell = np.cross(a, b)
    ell = ell / np.linalg.norm(ell[:, :2], axis=1, keepdims=True)
    n = np.array([c.noise_bound for c in lines], dtype=float)
    return Pw, ell, n


def point_reprojection_errors(points, pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Per-axis pixel errors ``(n, 2)``; rows behind the camera are ``inf``."""
    P, U, _ = _point_arrays(points)
    X = P @ np.asarray(pose.R).T + pose.t
    out = np.full((len(P), 2), np.inf)
    ok = X[:, 2] > DEPTH_EPS
    out[ok, 0] = K.fx * X[ok, 0] / X[ok, 2] + K.cx - U[ok, 0]
    out[ok, 1] = K.fy * X[ok, 1] / X[ok, 2] + K.cy - U[ok, 1]
    return out


def line_residuals(lines, pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Signed pixel distances ``(m, 2)`` of both projected endpoints to the observed line."""
    Pw, ell, _ = _line_arrays(lines, K)
    X = Pw @ np.asarray(pose.R).T + pose.t
    out = np.full(X.shape[:2], np.inf)
    ok = X[..., 2] > DEPTH_EPS
    q0 = K.fx * X[..., 0] / np.where(ok, X[..., 2], 1.0) + K.cx
    q1 = K.fy * X[..., 1] / np.where(ok, X[..., 2], 1.0) + K.cy
    d = ell[:, None, 0] * q0 + ell[:, None, 1] * q1 + ell[:, None, 2]
    return np.where(ok, d, out)


def points_consistent(points, pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Pixel-box test: every axis error within the correspondence's bound."""
    if not len(points):
        return np.zeros(0, dtype=bool)
    err = point_reprojection_errors(points, pose, K)
    n = np.array([c.noise_bound for c in points], dtype=float)
    return np.all(np.abs(err) <= n[:, None], axis=1)


def lines_consistent(lines, pose: Pose, K: CameraIntrinsics) -> np.ndarray:
    """Both projected endpoints within ``sqrt(2) * bound`` pixels of the observed line."""
    if not len(lines):
        return np.zeros(0, dtype=bool)
    d = line_residuals(lines, pose, K)
    n = np.array([c.noise_bound for c in lines], dtype=float)
    return np.all(np.abs(d) <= LINE_SLACK * n[:, None], axis=1)


# ---------------------------------------------------------------------------
# refinement

def _residuals_and_jacobian(params, basis: YawRotationBasis, P, U, Pw, ell, K: CameraIntrinsics):
    """Stacked pixel residuals and their Jacobian w.r.t. ``(yaw, tx, ty, tz)``."""
    a = params[0]
    t = params[1:]
    R = basis.at(a)
    dR = basis.sin_part * math.cos(a) - basis.cos_part * math.sin(a)

    def proj(Xw):
        X = Xw @ R.T + t
        dX = Xw @ dR.T
        z = X[:, 2]
        u = K.fx * X[:, 0] / z + K.cx
        v = K.fy * X[:, 1] / z + K.cy
        # d(u, v)/dX for each point, then chain onto yaw and t
        du = np.stack([K.fx / z, np.zeros_like(z), -K.fx * X[:, 0] / z**2], axis=1)
        dv = np.stack([np.zeros_like(z), K.fy / z, -K.fy * X[:, 1] / z**2], axis=1)
        ju = np.column_stack([np.sum(du * dX, axis=1), du])
        jv = np.column_stack([np.sum(dv * dX, axis=1), dv])
        return u, v, ju, jv

    res, jac = [], []
    if len(P):
        u, v, ju, jv = proj(P)
        res += [u - U[:, 0], v - U[:, 1]]
        jac += [ju, jv]
    if len(Pw):
        flat = Pw.reshape(-1, 3)
        lr = np.repeat(ell, 2, axis=0)
        u, v, ju, jv = proj(flat)
        res.append(lr[:, 0] * u + lr[:, 1] * v + lr[:, 2])
        jac.append(lr[:, :1] * ju + lr[:, 1:2] * jv)
    return np.concatenate(res), np.vstack(jac)


def refine_objective(params, points, lines, prior: GravityPrior, K: CameraIntrinsics):
    """Sum of squared pixel residuals and its analytic gradient at ``(yaw, t)``."""
    basis = YawRotationBasis.from_prior(prior)
    P, U, _ = _point_arrays(points)
    Pw, ell, _ = _line_arrays(lines, K) if len(lines) else (np.zeros((0, 2, 3)), None, None)
    r, J = _residuals_and_jacobian(np.asarray(params, dtype=float), basis, P, U, Pw, ell, K)
    return float(r @ r), 2.0 * (J.T @ r)


def _levenberg_marquardt(fun, x, iters: int, tol: float) -> np.ndarray:
    """Minimize ``|r(x)|^2`` for ``fun(x) -> (r, J)``; only cost-lowering steps are taken."""

    def evaluate(x):
        with np.errstate(divide="ignore", invalid="ignore"):
            r, J = fun(x)
        return float(r @ r), r, J

    cost, r, J = evaluate(x)
    if not np.isfinite(cost):
        return x
    lam = 1e-3
    for _ in range(iters):
        g = J.T @ r
        if np.linalg.norm(g) < tol:
            break
        H = J.T @ J
        improved = False
        while lam < 1e12:
            A = H + lam * np.diag(np.maximum(np.diag(H), 1e-12))
            try:
                step = np.linalg.solve(A, -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            c_new, r_new, J_new = evaluate(x + step)
            if np.isfinite(c_new) and c_new < cost:
                x, cost, r, J = x + step, c_new, r_new, J_new
                lam = max(lam / 10.0, 1e-12)
                improved = True
                break
            lam *= 10.0
        if not improved or np.linalg.norm(step) < 1e-15 * (1.0 + np.linalg.norm(x)):
            break
    return x


def _problem(points, lines, prior, K):
    basis = YawRotationBasis.from_prior(prior)
    P, U, n_p = _point_arrays(points)
    if len(lines):
        Pw, ell, n_l = _line_arrays(lines, K)
    else:
        Pw, ell, n_l = np.zeros((0, 2, 3)), None, np.zeros(0)
    bounds = np.concatenate([n_p, n_p, np.repeat(LINE_SLACK * n_l, 2)])
    return basis, P, U, Pw, ell, bounds


def refine(
    points: Sequence[PointCorrespondence],
    lines: Sequence[LineCorrespondence],
    initial: Pose,
    alpha: float,
    prior: GravityPrior,
    K: CameraIntrinsics,
    config: SolverConfig = SolverConfig(),
) -> tuple[Pose, float]:
    """Levenberg-Marquardt over yaw and translation with pitch and roll frozen.

    Minimizes squared point reprojection errors plus squared point-to-line
    distances of projected line endpoints, all in pixels.  Returns the refined
    pose and yaw; a step is only taken when it lowers the cost.
    """
    if not len(points) and not len(lines):
        raise InsufficientInput("refinement needs a non-empty consensus set")
    basis, P, U, Pw, ell, _ = _problem(points, lines, prior, K)
    x0 = np.concatenate([[alpha], np.asarray(initial.t, dtype=float)])
    x = _levenberg_marquardt(
        lambda x: _residuals_and_jacobian(x, basis, P, U, Pw, ell, K), x0,
        config.refine_iters, config.refine_tol,
    )
    if x is x0:
        return initial, alpha
    a = float(wrap_angle(x[0]))
    return Pose(build_rotation(prior, a), x[1:].copy()), a


def robust_refine(points, lines, initial: Pose, alpha: float, prior, K, config=SolverConfig(),
                  rounds: int = 10) -> tuple[Pose, float]:
    """Iteratively reweighted refinement with Cauchy weights scaled by each member's bound.

    Used to start the consensus check from a pose that gross outliers in
    the voted set cannot drag away.
    """
    basis, P, U, Pw, ell, bounds = _problem(points, lines, prior, K)
    x = np.concatenate([[alpha], np.asarray(initial.t, dtype=float)])
    for _ in range(rounds):
        with np.errstate(divide="ignore", invalid="ignore"):
            r, _ = _residuals_and_jacobian(x, basis, P, U, Pw, ell, K)
        if not np.all(np.isfinite(r)):
            break
        sw = 1.0 / np.sqrt(1.0 + (r / bounds) ** 2)

        def fun(x, sw=sw):
            r, J = _residuals_and_jacobian(x, basis, P, U, Pw, ell, K)
            return sw * r, sw[:, None] * J

        # reweighting converges anyway, so each inner solve only needs a few steps
        x_new = _levenberg_marquardt(fun, x, min(config.refine_iters, 10), config.refine_tol)
        if np.linalg.norm(x_new - x) < 1e-12:
            break
        x = x_new
    a = float(wrap_angle(x[0]))
    return Pose(build_rotation(prior, a), x[1:].copy()), a


def repair_feasibility(points, lines, pose: Pose, alpha: float, prior, K, config=SolverConfig(),
                       margin: float = 0.98) -> tuple[Pose, float]:
    """Pull a least-squares pose inside every member's pixel bound when possible.

    Adds ``sqrt(mu) * max(|r| - margin*n, 0)`` penalties to the least-squares
    residuals and raises ``mu`` until the bounds hold or ``mu`` is exhausted.
    """
    basis, P, U, Pw, ell, bounds = _problem(points, lines, prior, K)
    lim = margin * bounds
    x = np.concatenate([[alpha], np.asarray(pose.t, dtype=float)])
    for mu in (1e2, 1e4, 1e6):
        s = math.sqrt(mu)

        def fun(x):
            r, J = _residuals_and_jacobian(x, basis, P, U, Pw, ell, K)
            over = np.abs(r) > lim
            h = np.where(over, r - np.sign(r) * lim, 0.0)
            return np.concatenate([r, s * h]), np.vstack([J, s * J * over[:, None]])

        x = _levenberg_marquardt(fun, x, config.refine_iters, config.refine_tol)
        r, _ = _residuals_and_jacobian(x, basis, P, U, Pw, ell, K)
        if np.all(np.abs(r) <= bounds):
            break
    a = float(wrap_angle(x[0]))
    return Pose(build_rotation(prior, a), x[1:].copy()), a


# ---------------------------------------------------------------------------
# RANSAC seeds and baseline

@dataclass(frozen=True, eq=False)
class RansacResult:
    seeds: list
    pose: Optional[Pose]
    alpha: float
    cardinality: int
    point_ids: frozenset = frozenset()
    line_ids: frozenset = frozenset()


def _consistent_ids(points, lines, pose, K):
    pm = points_consistent(points, pose, K)
    lm = lines_consistent(lines, pose, K)
    return (frozenset(points[i].id for i in np.flatnonzero(pm)),
            frozenset(lines[i].id for i in np.flatnonzero(lm)))


def ransac_2entity(
    points: Sequence[PointCorrespondence],
    lines: Sequence[LineCorrespondence],
    prior: GravityPrior,
    K: CameraIntrinsics,
    iterations: int = 200,
    rng_seed: int = 0,
    n_seeds: int = 10,
    min_separation: float = 0.05,
) -> RansacResult:
    """Minimal two-entity RANSAC under the gravity prior.

    A sample is two points (yaw from the zeros of their TIM) or a point and a
    line (yaw from the line's TIM); translation then follows in closed form.
    Returns the best ``n_seeds`` yaws at least ``min_separation`` apart.
    """
    n_p, n_l = len(points), len(lines)
    if n_p < 2 and not (n_p >= 1 and n_l >= 1):
        raise InsufficientInput("need two points or one point and one line")
    rng = np.random.default_rng(rng_seed)
    basis = YawRotationBasis.from_prior(prior)
    scored: list[tuple[int, float, float, Pose, frozenset, frozenset]] = []
    n_pp = n_p * (n_p - 1) // 2
    n_pl = n_p * n_l
    for _ in range(iterations):
        use_line = rng.random() * (n_pp + n_pl) >= n_pp
        i = int(rng.integers(n_p))
        try:
            if use_line:
                other = lines[int(rng.integers(n_l))]
                tim = line_tim(other, prior, K, "paper_min", basis)
            else:
                j = int(rng.integers(n_p - 1))
                other = points[j + (j >= i)]
                tim = point_tim(points[i], other, prior, K, "paper_min", basis)
        except (DegeneratePair, DegenerateLine):
            continue
        for a in sinusoid.roots(tim.coef):
            R = build_rotation(prior, a)
            try:
                if use_line:
                    t = solve_pair_point_line(points[i], other, R, K)
                else:
                    t = solve_pair_point_point(points[i], other, R, K)
            except (DegeneratePair, DegeneratePairLine):
                continue
            if not np.all(np.isfinite(t)):
                continue
            pose = Pose(R, t)
            pid, lid = _consistent_ids(points, lines, pose, K)
            scored.append((len(pid) + len(lid), -len(scored), a, pose, pid, lid))
    if not scored:
        return RansacResult([], None, 0.0, 0)
    scored.sort(key=lambda s: (-s[0], -s[1]))
    seeds: list[tuple[float, int]] = []
    for card, _, a, *_ in scored:
        if all(abs(wrap_angle(a - s)) >= min_separation for s, _ in seeds):
            seeds.append((float(a), card))
        if len(seeds) >= n_seeds:
            break
    card, _, a, pose, pid, lid = scored[0]
    return RansacResult(seeds, pose, float(a), card, pid, lid)


# ---------------------------------------------------------------------------

def _violation(points, lines, pose, K) -> tuple[np.ndarray, np.ndarray]:
    """Residual over allowed bound per member; > 1 means the pixel test fails."""
    vp = np.zeros(len(points))
    vl = np.zeros(len(lines))
    if len(points):
        err = np.abs(point_reprojection_errors(points, pose, K)).max(axis=1)
        vp = err / np.array([c.noise_bound for c in points])
    if len(lines):
        d = np.abs(line_residuals(lines, pose, K)).max(axis=1)
        vl = d / (LINE_SLACK * np.array([c.noise_bound for c in lines]))
    return vp, vl


def _fit_members(points, lines, pose, alpha, prior, K, config):
    """Least-squares refinement, repaired towards feasibility when a bound is violated."""
    ref, a = refine(points, lines, pose, alpha, prior, K, config)
    vp, vl = _violation(points, lines, ref, K)
    if vp.max(initial=0.0) > 1.0 or vl.max(initial=0.0) > 1.0:
        rep, a2 = repair_feasibility(points, lines, ref, a, prior, K, config)
        wp, wl = _violation(points, lines, rep, K)
        if wp.max(initial=0.0) <= 1.0 and wl.max(initial=0.0) <= 1.0:
            return rep, a2, wp, wl
    return ref, a, vp, vl


def _prune_and_refine(points, lines, pose, alpha, prior, K, config, gross_factor: float = 3.0):
    """Refine on the set and drop the worst member until every member passes.

    Each round fits the current set robustly from the voting pose, then
    refines by least squares from there; when a bound still fails, every
    member beyond ``gross_factor`` times its bound at the robust pose is
    dropped, or else the single worst one.  Dropped members that pass at the
    final pose are re-admitted when the re-refined pose keeps them all.
    """
    points, lines = list(points), list(lines)
    dropped_p, dropped_l = [], []
    while True:
        if not points and not lines:
            raise NoConsensus("no consensus member survives verification")
        start, a0 = robust_refine(points, lines, pose, alpha, prior, K, config)
        ref, a, vp, vl = _fit_members(points, lines, start, a0, prior, K, config)
        if max(vp.max(initial=0.0), vl.max(initial=0.0)) <= 1.0:
            break
        vp, vl = _violation(points, lines, start, K)
        worst_p, worst_l = vp.max(initial=0.0), vl.max(initial=0.0)
        if max(worst_p, worst_l) > gross_factor:
            drop_p, drop_l = set(np.flatnonzero(vp > gross_factor)), set(np.flatnonzero(vl > gross_factor))
        elif worst_p >= worst_l:
            drop_p, drop_l = {int(np.argmax(vp))}, set()
        else:
            drop_p, drop_l = set(), {int(np.argmax(vl))}
        dropped_p += [c for i, c in enumerate(points) if i in drop_p]
        dropped_l += [c for i, c in enumerate(lines) if i in drop_l]
        points = [c for i, c in enumerate(points) if i not in drop_p]
        lines = [c for i, c in enumerate(lines) if i not in drop_l]

    vp, vl = _violation(dropped_p, dropped_l, ref, K)
    back_p = [c for c, v in zip(dropped_p, vp) if v <= 1.0]
    back_l = [c for c, v in zip(dropped_l, vl) if v <= 1.0]
    if back_p or back_l:
        cand_p = sorted(points + back_p, key=lambda c: c.id)
        cand_l = sorted(lines + back_l, key=lambda c: c.id)
        ref2, a2, wp, wl = _fit_members(cand_p, cand_l, ref, a, prior, K, config)
        if wp.max(initial=0.0) <= 1.0 and wl.max(initial=0.0) <= 1.0:
            return cand_p, cand_l, ref2, a2
    return points, lines, ref, a


def expand_consensus(points, lines, members_p, members_l, pose, alpha, prior, K, config,
                     candidate_slack: float = 3.0):
    """Grow the consensus with correspondences that fit the refined pose.

    Candidates are non-members within ``candidate_slack`` times their bound;
    the enlarged set is re-fitted and kept only if every member then passes
    its bound exactly.  Stops after ``config.expand_rounds`` rounds or when
    no round is accepted.
    """
    for _ in range(config.expand_rounds):
        have_p = {c.id for c in members_p}
        have_l = {c.id for c in members_l}
        vp, vl = _violation(points, lines, pose, K)
        new_p = [c for c, v in zip(points, vp) if c.id not in have_p and v <= candidate_slack]
        new_l = [c for c, v in zip(lines, vl) if c.id not in have_l and v <= candidate_slack]
        if not new_p and not new_l:
            break
        cand_p = sorted(members_p + new_p, key=lambda c: c.id)
        cand_l = sorted(members_l + new_l, key=lambda c: c.id)
        ref, a, wp, wl = _fit_members(cand_p, cand_l, pose, alpha, prior, K, config)
        if wp.max(initial=0.0) > 1.0 or wl.max(initial=0.0) > 1.0:
            break
        members_p, members_l, pose, alpha = cand_p, cand_l, ref, a
    return members_p, members_l, pose, alpha


def solve(
    points: Sequence[PointCorrespondence],
    lines: Sequence[LineCorrespondence],
    prior: GravityPrior,
    K: CameraIntrinsics,
    config: SolverConfig = SolverConfig(),
    trace: Optional[Callable[[dict], None]] = None,
) -> LocalizationResult:
    """Globally optimal yaw, voted translation, then 4-DoF refinement on the consensus."""
    points, lines = list(points), list(lines)
    if len(points) < 2 and not (len(points) >= 1 and len(lines) >= 1):
        raise InsufficientInput("need at least two points, or one point and one line")
    timings: dict[str, float] = {}
    clock = time.perf_counter

    t0 = clock()
    tims = build_all_tims(points, lines, prior, K, config.pair_cap, config.bound_mode)
    timings["tim"] = clock() - t0

    seeds = None
    if config.bnb.use_seeding and config.bnb.ransac_seeds > 0:
        t0 = clock()
        rs = ransac_2entity(points, lines, prior, K, config.ransac_iterations,
                            config.rng_seed, config.bnb.ransac_seeds)
        seeds = rs.seeds
        timings["ransac"] = clock() - t0

    t0 = clock()
    rot = bnb_search(tims, config.bnb, seeds, trace)
    timings["rotation"] = clock() - t0

    t0 = clock()
    R = build_rotation(prior, rot.alpha)
    window = None
    if config.yaw_margin > 0:
        basis = YawRotationBasis.from_prior(prior)
        window = (basis, rot.alpha - config.yaw_margin, rot.alpha + config.yaw_margin)
    consistent = rot.inlier_ids if config.rotation_filter else None
    hyps = build_hypotheses(points, lines, R, K, config.pair_cap, config.box_mode, window, consistent)
    if len(hyps) == 0:
        raise NoConsensus("no bounded translation hypothesis")
    if config.voting_mode == "prioritized":
        tr = prioritized_progressive_vote(hyps, trace=trace)
    else:
        tr = dimension_wise_vote(hyps)
    timings["translation"] = clock() - t0

    t0 = clock()
    by_pid = {c.id: c for c in points}
    by_lid = {c.id: c for c in lines}
    cons_p = [by_pid[i] for kind, i in sorted(tr.consensus_ids) if kind == "point"]
    cons_l = [by_lid[i] for kind, i in sorted(tr.consensus_ids) if kind == "line"]
    pose0 = Pose(R, np.asarray(tr.t, dtype=float))
    cons_p, cons_l, pose, alpha = _prune_and_refine(cons_p, cons_l, pose0, rot.alpha, prior, K, config)
    cons_p, cons_l, pose, alpha = expand_consensus(points, lines, cons_p, cons_l, pose, alpha, prior, K, config)
    timings["refine"] = clock() - t0

    return LocalizationResult(
        pose=pose,
        alpha=alpha,
        consensus_point_ids=frozenset(c.id for c in cons_p),
        consensus_line_ids=frozenset(c.id for c in cons_l),
        stage_timings=timings,
        rotation_cardinality=rot.cardinality,
        translation_cardinality=tr.cardinality,
    )
