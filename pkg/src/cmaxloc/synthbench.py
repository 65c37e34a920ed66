"""Synthetic scenes, Monte-Carlo trials and aggregated benchmark tables."""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

from .errors import CmaxlocError, GenerationFailure
from .geom import CameraIntrinsics, GravityPrior, Pose, build_rotation, pose_error
from .pipeline import SolverConfig, _prune_and_refine, ransac_2entity, solve
from .rot_bnb import BnbConfig
from .tim import LineCorrespondence, PointCorrespondence

log = logging.getLogger(__name__)

SCENE_SCHEMA = "cmaxloc.scene/1"
TRIAL_SCHEMA = "cmaxloc.trial/1"
SOLVERS = ("ours", "ours-dv", "ransac")
MIN_DEPTH = 0.1
MIN_LINE_PIXELS = 20.0
MAX_ATTEMPTS = 1000


@dataclass(frozen=True)
class SceneConfig:
    n_points: int = 50
    n_lines: int = 0
    outlier_rate: float = 0.0
    pixel_noise_bound: float = 2.0
    world_cube_half: float = 1.0
    translation_half: float = 2.0
    yaw_range: tuple = (-math.pi, math.pi)
    gravity_noise_sigma_deg: float = 0.0
    camera: CameraIntrinsics = field(default_factory=lambda: CameraIntrinsics(400.0, 400.0, 320.0, 240.0))
    image_size: tuple = (640, 480)
    noise_model: str = "uniform"
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.outlier_rate < 1.0:
            raise ValueError("outlier_rate must be in [0, 1)")
        if self.n_points < 0 or self.n_lines < 0:
            raise ValueError("counts must be non-negative")
        if self.noise_model not in ("uniform", "truncated_gaussian", "none"):
            raise ValueError(f"unknown noise model {self.noise_model!r}")
        if not self.pixel_noise_bound > 0:
            raise ValueError("pixel_noise_bound must be positive")

    def outlier_split(self) -> tuple[int, int]:
        """``(point, line)`` outlier counts: nearest integer overall, shared pro rata."""
        total = self.n_points + self.n_lines
        n_out = math.floor(self.outlier_rate * total + 0.5)
        if total == 0:
            return 0, 0
        n_pt = min(self.n_points, math.floor(n_out * self.n_points / total + 0.5))
        n_ln = min(self.n_lines, n_out - n_pt)
        return n_pt + (n_out - n_pt - n_ln), n_ln


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    points: list
    lines: list
    point_inlier: np.ndarray
    line_inlier: np.ndarray
    pose: Pose
    true_prior: GravityPrior
    prior: GravityPrior
    camera: CameraIntrinsics
    image_size: tuple

    @property
    def inlier_ids(self) -> tuple[frozenset, frozenset]:
        return (frozenset(c.id for c, f in zip(self.points, self.point_inlier) if f),
                frozenset(c.id for c, f in zip(self.lines, self.line_inlier) if f))


# ---------------------------------------------------------------------------
# generation

class _Renderer:
    def __init__(self, config: SceneConfig, rng: np.random.Generator):
        self.c = config
        self.rng = rng
        self.K = config.camera
        self.w, self.h = config.image_size

    def pose(self) -> tuple[Pose, GravityPrior, float]:
        rng = self.rng
        centre = rng.uniform(-self.c.translation_half, self.c.translation_half, 3)
        yaw = rng.uniform(*self.c.yaw_range)
        prior = GravityPrior(rng.uniform(-math.pi / 2, math.pi / 2), rng.uniform(-math.pi, math.pi))
        R = build_rotation(prior, yaw)
        return Pose(R, -R @ centre), prior, yaw

    def cube(self, n: int) -> np.ndarray:
        h = self.c.world_cube_half
        return self.rng.uniform(-h, h, (n, 3))

    def visible(self, pose: Pose, P: np.ndarray):
        X = P @ pose.R.T + pose.t
        z = X[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            uv = np.column_stack([self.K.fx * X[:, 0] / z + self.K.cx, self.K.fy * X[:, 1] / z + self.K.cy])
        m = self.c.pixel_noise_bound
        ok = (z > MIN_DEPTH) & (uv[:, 0] >= m) & (uv[:, 0] <= self.w - m) & (uv[:, 1] >= m) & (uv[:, 1] <= self.h - m)
        return ok, uv

    def noise(self, shape) -> np.ndarray:
        n = self.c.pixel_noise_bound
        if self.c.noise_model == "none":
            return np.zeros(shape)
        if self.c.noise_model == "uniform":
            return self.rng.uniform(-n, n, shape)
        out = self.rng.normal(0.0, n / 2.0, shape)
        bad = np.abs(out) > n
        while bad.any():
            out[bad] = self.rng.normal(0.0, n / 2.0, int(bad.sum()))
            bad = np.abs(out) > n
        return out

    def points(self, pose: Pose, count: int) -> Optional[tuple[np.ndarray, np.ndarray]]:
        P, U = [], []
        have = 0
        for _ in range(50):
            if have >= count:
                break
            cand = self.cube(max(4 * (count - have), 16))
            ok, uv = self.visible(pose, cand)
            P.append(cand[ok]); U.append(uv[ok])
            have += int(ok.sum())
        if have < count:
            return None
        return np.vstack(P)[:count], np.vstack(U)[:count]

    def segments(self, pose: Pose, count: int):
        S, U = [np.zeros((0, 2, 3))], [np.zeros((0, 2, 2))]
        have, batch = 0, 64
        for _ in range(200 * max(count, 1) // batch + 1):
            if have >= count:
                break
            seg = self.cube(2 * batch)
            ok, uv = self.visible(pose, seg)
            ok, uv = ok.reshape(batch, 2).all(axis=1), uv.reshape(batch, 2, 2)
            ok &= np.linalg.norm(uv[:, 0] - uv[:, 1], axis=1) >= MIN_LINE_PIXELS
            S.append(seg.reshape(batch, 2, 3)[ok]); U.append(uv[ok])
            have += int(ok.sum())
        if have < count:
            return None
        return np.concatenate(S)[:count].reshape(-1, 2, 3), np.concatenate(U)[:count].reshape(-1, 2, 2)

    def decoy(self, kind: str):
        """One feature rendered from an independently sampled pose."""
        for _ in range(MAX_ATTEMPTS):
            pose, _, _ = self.pose()
            got = self.points(pose, 1) if kind == "point" else self.segments(pose, 1)
            if got is not None:
                return got
        raise GenerationFailure("could not render an outlier from any decoy pose")


def generate_scene(config: SceneConfig) -> SyntheticScene:
    """Random scene, deterministic in ``config.rng_seed``."""
    rng = np.random.default_rng(config.rng_seed)
    r = _Renderer(config, rng)
    out_pt, out_ln = config.outlier_split()
    in_pt, in_ln = config.n_points - out_pt, config.n_lines - out_ln
    for _ in range(MAX_ATTEMPTS):
        pose, prior, _ = r.pose()
        pts = r.points(pose, in_pt)
        segs = r.segments(pose, in_ln) if pts is not None else None
        if pts is not None and segs is not None:
            break
    else:
        raise GenerationFailure("no camera pose sees enough of the cube")

    P, U = pts
    U = U + r.noise(U.shape)
    S, SU = segs
    SU = SU + r.noise(SU.shape)
    for _ in range(out_pt):
        p, u = r.decoy("point")
        P = np.vstack([P, p]); U = np.vstack([U, u + r.noise(u.shape)])
    for _ in range(out_ln):
        s, su = r.decoy("line")
        S = np.concatenate([S, s]); SU = np.concatenate([SU, su + r.noise(su.shape)])

    n = config.pixel_noise_bound
    p_in = np.arange(config.n_points) < in_pt
    l_in = np.arange(config.n_lines) < in_ln
    pp = rng.permutation(config.n_points)
    lp = rng.permutation(config.n_lines)
    points = [PointCorrespondence(P[k], U[k], n, i) for i, k in enumerate(pp)]
    lines = [LineCorrespondence(S[k, 0], S[k, 1], SU[k, 0], SU[k, 1], n, i) for i, k in enumerate(lp)]

    sigma = math.radians(config.gravity_noise_sigma_deg)
    noisy = prior
    if sigma > 0:
        dp, dr = rng.normal(0.0, sigma, 2)
        noisy = GravityPrior(prior.pitch + dp, prior.roll + dr)
    return SyntheticScene(points, lines, p_in[pp], l_in[lp], pose, prior, noisy,
                          config.camera, tuple(config.image_size))


# ---------------------------------------------------------------------------
# scene files

def scene_to_dict(scene: SyntheticScene) -> dict:
    K = scene.camera
    return {
        "schema": SCENE_SCHEMA,
        "camera": {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
                   "width": scene.image_size[0], "height": scene.image_size[1]},
        "prior": {"pitch": scene.prior.pitch, "roll": scene.prior.roll},
        "true_prior": {"pitch": scene.true_prior.pitch, "roll": scene.true_prior.roll},
        "true_pose": {"R": np.asarray(scene.pose.R).tolist(), "t": np.asarray(scene.pose.t).tolist()},
        "points": [
            {"id": c.id, "p": c.p.tolist(), "u": c.u.tolist(), "noise_bound": c.noise_bound,
             "inlier": bool(f)}
            for c, f in zip(scene.points, scene.point_inlier)
        ],
        "lines": [
            {"id": c.id, "p_start": c.p_start.tolist(), "p_end": c.p_end.tolist(),
             "u_start": c.u_start.tolist(), "u_end": c.u_end.tolist(),
             "noise_bound": c.noise_bound, "inlier": bool(f)}
            for c, f in zip(scene.lines, scene.line_inlier)
        ],
    }


def scene_from_dict(d: dict) -> SyntheticScene:
    if d.get("schema") != SCENE_SCHEMA:
        raise ValueError(f"unsupported scene schema {d.get('schema')!r}")
    cam = d["camera"]
    K = CameraIntrinsics(cam["fx"], cam["fy"], cam["cx"], cam["cy"])
    prior = GravityPrior(d["prior"]["pitch"], d["prior"]["roll"])
    tp = d.get("true_prior", d["prior"])
    pose_d = d.get("true_pose")
    pose = Pose(np.array(pose_d["R"]), np.array(pose_d["t"])) if pose_d else Pose.identity()
    pts = d.get("points", [])
    lns = d.get("lines", [])
    return SyntheticScene(
        [PointCorrespondence(q["p"], q["u"], q.get("noise_bound", 2.0), q["id"]) for q in pts],
        [LineCorrespondence(q["p_start"], q["p_end"], q["u_start"], q["u_end"],
                            q.get("noise_bound", 2.0), q["id"]) for q in lns],
        np.array([q.get("inlier", True) for q in pts], dtype=bool),
        np.array([q.get("inlier", True) for q in lns], dtype=bool),
        pose,
        GravityPrior(tp["pitch"], tp["roll"]),
        prior,
        K,
        (cam.get("width", int(2 * K.cx)), cam.get("height", int(2 * K.cy))),
    )


def save_scene(scene: SyntheticScene, path) -> None:
    with open(path, "w") as fp:
        json.dump(scene_to_dict(scene), fp, indent=1)
        fp.write("\n")


def load_scene(path) -> SyntheticScene:
    with open(path) as fp:
        return scene_from_dict(json.load(fp))


# ---------------------------------------------------------------------------
# trials

@dataclass
class TrialMetrics:
    dT: float
    dR: float
    precision: float
    recall: float
    success: bool
    cardinality: int
    n_inliers: int
    timings: dict = field(default_factory=dict)
    error: Optional[str] = None

    def __post_init__(self):
        if not (0.0 <= self.precision <= 1.0 and 0.0 <= self.recall <= 1.0):
            raise ValueError("precision and recall must lie in [0, 1]")
        self.success = bool(self.dT < 0.1 and self.dR < 0.5)


def cci(estimated: tuple, truth: tuple) -> tuple[float, float]:
    """Precision and recall of an estimated consensus against the true inliers."""
    est = {("point", i) for i in estimated[0]} | {("line", i) for i in estimated[1]}
    tru = {("point", i) for i in truth[0]} | {("line", i) for i in truth[1]}
    hit = len(est & tru)
    return (hit / len(est) if est else 0.0), (hit / len(tru) if tru else 1.0)


def solver_config(name: str, base: SolverConfig = SolverConfig()) -> SolverConfig:
    if name == "ours":
        return replace(base, voting_mode="prioritized")
    if name == "ours-dv":
        return replace(base, voting_mode="dimension_wise")
    if name == "ransac":
        return base
    raise ValueError(f"unknown solver {name!r}")


def run_solver(name: str, scene: SyntheticScene, config: SolverConfig = SolverConfig()):
    """``(pose, point_ids, line_ids, timings)`` for one named solver."""
    cfg = solver_config(name, config)
    if name == "ransac":
        t0 = time.perf_counter()
        rs = ransac_2entity(scene.points, scene.lines, scene.prior, scene.camera,
                            cfg.ransac_iterations, cfg.rng_seed, 1)
        if rs.pose is None or rs.cardinality == 0:
            raise CmaxlocError("RANSAC found no consistent sample")
        pts = [c for c in scene.points if c.id in rs.point_ids]
        lns = [c for c in scene.lines if c.id in rs.line_ids]
        pts, lns, pose, _ = _prune_and_refine(pts, lns, rs.pose, rs.alpha, scene.prior, scene.camera, cfg)
        return (pose, frozenset(c.id for c in pts), frozenset(c.id for c in lns),
                {"total": time.perf_counter() - t0})
    res = solve(scene.points, scene.lines, scene.prior, scene.camera, cfg)
    return res.pose, res.consensus_point_ids, res.consensus_line_ids, res.stage_timings


def evaluate_trial(name: str, scene: SyntheticScene, config: SolverConfig = SolverConfig()) -> TrialMetrics:
    truth = scene.inlier_ids
    n_in = len(truth[0]) + len(truth[1])
    try:
        pose, pid, lid, timings = run_solver(name, scene, config)
    except CmaxlocError as exc:
        return TrialMetrics(math.inf, math.inf, 0.0, 0.0, False, 0, n_in, {}, type(exc).__name__)
    dT, dR = pose_error(pose, scene.pose)
    prec, rec = cci((pid, lid), truth)
    return TrialMetrics(dT, dR, prec, rec, False, len(pid) + len(lid), n_in, timings)


def trial_seed(rng_seed: int, cell: int, trial: int) -> int:
    return int(np.random.SeedSequence([rng_seed, cell, trial]).generate_state(1)[0])


def _trial_job(args):
    scene_cfg, names, solver_cfg = args
    scene = generate_scene(scene_cfg)
    return [evaluate_trial(n, scene, solver_cfg) for n in names]


def _run_jobs(jobs_args: list, jobs: int) -> list:
    if jobs <= 1:
        return [_trial_job(a) for a in jobs_args]
    with ProcessPoolExecutor(max_workers=jobs) as ex:
        return list(ex.map(_trial_job, jobs_args, chunksize=1))


def _aggregate(metrics: Sequence[TrialMetrics]) -> dict:
    ok = [m for m in metrics if m.success]
    mean = lambda xs: float(np.mean(xs)) if len(xs) else float("nan")  # noqa: E731
    return {
        "runs": len(metrics),
        "success_pct": 100.0 * len(ok) / len(metrics) if metrics else float("nan"),
        "mean_dT": mean([m.dT for m in ok]),
        "mean_dR": mean([m.dR for m in ok]),
        "mean_precision": mean([m.precision for m in metrics]),
        "mean_recall": mean([m.recall for m in metrics]),
        "mean_cardinality": mean([m.cardinality for m in metrics]),
    }


def _timing_aggregate(metrics: Sequence[TrialMetrics]) -> dict:
    keys = sorted({k for m in metrics for k in m.timings})
    return {f"time_{k}": float(np.mean([m.timings.get(k, 0.0) for m in metrics])) for k in keys}


SWEEP_PARAMS = ("outlier_rate", "gravity_noise_sigma_deg", "n_points", "n_lines", "pixel_noise_bound")


@dataclass
class SweepResult:
    rows: list
    trials: list
    timings: list


def compare_solvers(
    base: SceneConfig,
    solvers: Sequence[str],
    sweep_param: Optional[str] = None,
    values: Sequence = (),
    runs: int = 100,
    config: SolverConfig = SolverConfig(),
    jobs: int = 1,
) -> SweepResult:
    """Every solver on the same scenes; one aggregate row per (cell, solver)."""
    if not solvers:
        raise ValueError("need at least one solver")
    for s in solvers:
        solver_config(s, config)
    if sweep_param is not None and sweep_param not in SWEEP_PARAMS:
        raise ValueError(f"cannot sweep {sweep_param!r}")
    cells = list(values) if sweep_param else [None]
    job_args = []
    for ci, v in enumerate(cells):
        cell_cfg = replace(base, **{sweep_param: v}) if sweep_param else base
        for k in range(runs):
            job_args.append((replace(cell_cfg, rng_seed=trial_seed(base.rng_seed, ci, k)), tuple(solvers), config))
    results = _run_jobs(job_args, jobs)

    rows, trials, timings = [], [], []
    for ci, v in enumerate(cells):
        block = results[ci * runs:(ci + 1) * runs]
        for si, s in enumerate(solvers):
            ms = [r[si] for r in block]
            head = {"cell": ci, "solver": s}
            if sweep_param:
                head[sweep_param] = v
            rows.append({**head, **_aggregate(ms)})
            timings.append({**head, **_timing_aggregate(ms)})
            for k, m in enumerate(ms):
                rec = asdict(m)
                rec.pop("timings")
                trials.append({"schema": TRIAL_SCHEMA, **head, "trial": k,
                               "seed": job_args[ci * runs + k][0].rng_seed, **rec})
    return SweepResult(rows, trials, timings)


def run_sweep(
    base: SceneConfig,
    sweep_param: str,
    values: Iterable,
    runs: int = 100,
    solver: str = "ours",
    config: SolverConfig = SolverConfig(),
    jobs: int = 1,
) -> SweepResult:
    """One solver over a grid of one scene parameter."""
    return compare_solvers(base, [solver], sweep_param, list(values), runs, config, jobs)


# ---------------------------------------------------------------------------
# output

def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def write_csv(rows: Sequence[dict], path) -> None:
    keys: list = []
    for r in rows:
        keys += [k for k in r if k not in keys]
    with open(path, "w", newline="") as fp:
        w = csv.DictWriter(fp, fieldnames=keys, lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: _fmt(r.get(k, "")) for k in keys})


def write_jsonl(records: Iterable[dict], path) -> None:
    with open(path, "w") as fp:
        for r in records:
            fp.write(json.dumps(r, sort_keys=True, default=_json_default) + "\n")


def _json_default(o):
    if isinstance(o, (np.integer,)):
        return int(o)
    if isinstance(o, (np.floating,)):
        return float(o)
    if isinstance(o, (np.bool_,)):
        return bool(o)
    raise TypeError(type(o).__name__)


def bench_solver_config(seed: int = 0) -> SolverConfig:
    return SolverConfig(bnb=BnbConfig(), rng_seed=seed)
