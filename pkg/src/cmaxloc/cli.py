"""Command-line front end.

Exit codes: 0 success, 2 usage, 3 I/O or format error, 4 solver found no consensus.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from collections import Counter, defaultdict
from dataclasses import replace
from pathlib import Path

import numpy as np

from .errors import CmaxlocError, InsufficientInput, NoConsensus
from .geom import CameraIntrinsics
from .pipeline import SolverConfig, solve
from .rot_bnb import BnbConfig, trace_writer
from .synthbench import (
    SOLVERS,
    SceneConfig,
    compare_solvers,
    generate_scene,
    load_scene,
    save_scene,
    write_csv,
    write_jsonl,
)

RESULT_SCHEMA = "cmaxloc.result/1"
EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NO_CONSENSUS = 0, 2, 3, 4

log = logging.getLogger("cmaxloc")


class UsageError(Exception):
    pass


def _range(spec: str) -> list[float]:
    """``start:stop:step`` inclusive of ``stop`` (to rounding), or a comma list."""
    try:
        if ":" in spec:
            a, b, s = (float(x) for x in spec.split(":"))
            if s <= 0 or b < a:
                raise ValueError
            n = int(np.floor((b - a) / s + 1e-9)) + 1
            return [round(a + k * s, 10) for k in range(n)]
        return [float(x) for x in spec.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad range {spec!r}; use start:stop:step or a,b,c") from None


def _add_scene_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--points", type=int, default=50)
    p.add_argument("--lines", type=int, default=0)
    p.add_argument("--outlier-rate", type=float, default=0.0)
    p.add_argument("--noise", type=float, default=2.0, help="pixel noise bound")
    p.add_argument("--imu-sigma", type=float, default=0.0, help="gravity noise sigma in degrees")
    p.add_argument("--noise-model", choices=["uniform", "truncated_gaussian", "none"], default="uniform")
    p.add_argument("--fx", type=float, default=400.0)
    p.add_argument("--fy", type=float, default=400.0)
    p.add_argument("--width", type=int, default=640)
    p.add_argument("--height", type=int, default=480)
    p.add_argument("--seed", type=int, default=0)


def _add_solver_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--voting", choices=["prioritized", "dimension-wise"], default="prioritized")
    p.add_argument("--bound-mode", choices=["propagated", "paper_min"], default="propagated")
    p.add_argument("--box-mode", choices=["vertex", "mccormick"], default="vertex")
    p.add_argument("--seeded", action="store_true", help="restrict the yaw search around RANSAC seeds")
    p.add_argument("--epsilon", type=float, default=1e-4, help="yaw resolution in radians")
    p.add_argument("--pair-cap", type=int, default=None)
    p.add_argument("--all-pairs", action="store_true",
                   help="vote on every pair instead of only yaw-consistent ones")


def _scene_config(a) -> SceneConfig:
    if a.points < 0 or a.lines < 0:
        raise UsageError("counts must be non-negative")
    if a.points + a.lines == 0:
        raise UsageError("empty scene: need --points or --lines")
    try:
        return SceneConfig(
            n_points=a.points, n_lines=a.lines, outlier_rate=a.outlier_rate,
            pixel_noise_bound=a.noise, gravity_noise_sigma_deg=a.imu_sigma,
            camera=CameraIntrinsics(a.fx, a.fy, a.width / 2.0, a.height / 2.0),
            image_size=(a.width, a.height), noise_model=a.noise_model, rng_seed=a.seed,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _solver_config(a) -> SolverConfig:
    try:
        return SolverConfig(
            bnb=BnbConfig(epsilon_alpha=a.epsilon, use_seeding=a.seeded),
            voting_mode="dimension_wise" if a.voting == "dimension-wise" else "prioritized",
            bound_mode=a.bound_mode, box_mode=a.box_mode, rng_seed=a.seed,
            pair_cap=a.pair_cap, rotation_filter=not a.all_pairs,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


# ---------------------------------------------------------------------------

def cmd_synth(a) -> int:
    scene = generate_scene(_scene_config(a))
    save_scene(scene, a.out)
    n_out = int((~scene.point_inlier).sum() + (~scene.line_inlier).sum())
    log.info("wrote %s with %d outliers", a.out, n_out)
    return EXIT_OK


def cmd_solve(a) -> int:
    scene = load_scene(a.scene)
    config = _solver_config(a)
    trace_fp = open(a.trace, "w") if a.trace else None
    try:
        trace = trace_writer(trace_fp) if trace_fp else None
        res = solve(scene.points, scene.lines, scene.prior, scene.camera, config, trace)
    finally:
        if trace_fp:
            trace_fp.close()
    out = {
        "schema": RESULT_SCHEMA,
        "alpha": res.alpha,
        "pose": {"R": np.asarray(res.pose.R).tolist(), "t": np.asarray(res.pose.t).tolist()},
        "consensus_point_ids": sorted(res.consensus_point_ids),
        "consensus_line_ids": sorted(res.consensus_line_ids),
        "cardinality": res.cardinality,
        "rotation_cardinality": res.rotation_cardinality,
        "translation_cardinality": res.translation_cardinality,
    }
    if a.timings:
        out["stage_timings"] = res.stage_timings
    sys.stdout.write(json.dumps(out, indent=1) + "\n")
    return EXIT_OK


def _sweep(a) -> tuple[str | None, list]:
    given = [(name, v) for name, v in (
        ("outlier_rate", a.outlier_sweep), ("gravity_noise_sigma_deg", a.imu_sigma_sweep),
        ("n_points", a.points_sweep),
    ) if v is not None]
    if len(given) > 1:
        raise UsageError("give at most one sweep flag")
    if not given:
        return None, []
    name, values = given[0]
    if name == "n_points":
        values = [int(v) for v in values]
    return name, values


def _run_table(a, solvers: list[str]) -> int:
    for s in solvers:
        if s not in SOLVERS:
            raise UsageError(f"unknown solver {s!r}; choose from {', '.join(SOLVERS)}")
    if a.runs < 1 or a.jobs < 1:
        raise UsageError("--runs and --jobs must be positive")
    param, values = _sweep(a)
    base = _scene_config(a)
    if param == "outlier_rate" and any(not 0 <= v < 1 for v in values):
        raise UsageError("outlier rates must lie in [0, 1)")
    res = compare_solvers(base, solvers, param, values, a.runs, _solver_config(a), a.jobs)
    K = base.camera
    cam = {"fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
           "width": base.image_size[0], "height": base.image_size[1],
           "noise_bound": base.pixel_noise_bound}
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv([{**r, **cam} for r in res.rows], out / "sweep.csv")
    write_jsonl(res.trials, out / "trials.jsonl")
    write_csv(res.timings, out / "timings.csv")
    log.info("wrote %d rows to %s", len(res.rows), out)
    return EXIT_OK


def cmd_bench(a) -> int:
    return _run_table(a, [s.strip() for s in a.solvers.split(",") if s.strip()])


def cmd_compare(a) -> int:
    return _run_table(a, [s.strip() for s in a.solvers.split(",") if s.strip()])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fp:
        return list(csv.DictReader(fp))


def _results_file(src: Path, name: str) -> Path:
    return src / name if src.is_dir() else src.parent / name if src.name != name else src


def cmd_export_plot(a) -> int:
    src = Path(a.inp)
    rows: list[dict] = []
    if a.kind == "success-curve":
        table = _read_csv(_results_file(src, "sweep.csv"))
        xkey = _x_column(table)
        for r in table:
            rows.append({"series": r["solver"], "x": r.get(xkey, r["cell"]), "y": r["success_pct"]})
    elif a.kind == "timing":
        table = _read_csv(_results_file(src, "timings.csv"))
        xkey = _x_column(table)
        for r in table:
            total = sum(float(v) for k, v in r.items() if k.startswith("time_") and v not in ("", None))
            rows.append({"series": r["solver"], "x": r.get(xkey, r["cell"]), "y": repr(total)})
    else:
        counts: dict = defaultdict(Counter)
        with open(_results_file(src, "trials.jsonl")) as fp:
            for line in fp:
                t = json.loads(line)
                counts[t["solver"]][int(t["cardinality"])] += 1
        for solver in sorted(counts):
            for card in sorted(counts[solver]):
                rows.append({"series": solver, "x": card, "y": counts[solver][card]})
    if a.out:
        write_csv(rows, a.out)
    else:
        w = csv.DictWriter(sys.stdout, fieldnames=["series", "x", "y"], lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return EXIT_OK


def _x_column(table: list[dict]) -> str:
    for key in ("outlier_rate", "gravity_noise_sigma_deg", "n_points", "n_lines", "pixel_noise_bound"):
        if table and key in table[0]:
            return key
    return "cell"


# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmaxloc", description="Gravity-aided global camera localization.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic scene file")
    _add_scene_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("solve", help="localize one scene file")
    p.add_argument("--scene", required=True)
    p.add_argument("--seed", type=int, default=0, help="seed for the RANSAC seeding stage")
    p.add_argument("--trace", help="write search trace as JSON lines to this path")
    p.add_argument("--timings", action="store_true", help="include per-stage timings in the output")
    _add_solver_flags(p)
    p.set_defaults(func=cmd_solve)

    for name, func, default_solvers in (("bench", cmd_bench, "ours"),
                                        ("compare", cmd_compare, ",".join(SOLVERS))):
        p = sub.add_parser(name, help="Monte-Carlo sweep" if name == "bench" else "compare solvers on shared scenes")
        _add_scene_flags(p)
        _add_solver_flags(p)
        p.add_argument("--solvers", default=default_solvers)
        p.add_argument("--outlier-sweep", type=_range)
        p.add_argument("--imu-sigma-sweep", type=_range)
        p.add_argument("--points-sweep", type=_range)
        p.add_argument("--runs", type=int, default=100)
        p.add_argument("--jobs", type=int, default=1)
        p.add_argument("--out", required=True)
        p.set_defaults(func=func)

    p = sub.add_parser("export-plot", help="turn results into long-format plot data")
    p.add_argument("--in", dest="inp", required=True, help="results directory or file")
    p.add_argument("--kind", choices=["success-curve", "timing", "cardinality"], required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_plot)
    return parser


def main(argv=None) -> int:
    level = os.environ.get("CMAXLOC_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    a = parser.parse_args(argv)
    try:
        return a.func(a)
    except UsageError as exc:
        parser.error(str(exc))
    except NoConsensus as exc:
        print(f"cmaxloc: no consensus: {exc}", file=sys.stderr)
        return EXIT_NO_CONSENSUS
    except InsufficientInput as exc:
        print(f"cmaxloc: {exc}", file=sys.stderr)
        return EXIT_IO
    except (OSError, ValueError, KeyError, TypeError, json.JSONDecodeError) as exc:
        print(f"cmaxloc: cannot read or write input: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO
    except CmaxlocError as exc:
        print(f"cmaxloc: {exc}", file=sys.stderr)
        return EXIT_NO_CONSENSUS
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
