import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cmaxloc.cli import main
from cmaxloc.geom import Pose, pose_error
from cmaxloc.synthbench import load_scene

FIXTURES = Path(__file__).parent / "fixtures" / "v1"


def run(*args):
    return main([str(a) for a in args])


def _rows(path):
    with open(path, newline="") as fp:
        return list(csv.DictReader(fp))


def test_synth_writes_flagged_outliers(tmp_path):
    out = tmp_path / "s.json"
    assert run("synth", "--points", 50, "--outlier-rate", 0.9, "--seed", 7, "--out", out) == 0
    d = json.loads(out.read_text())
    assert sum(not p["inlier"] for p in d["points"]) == 45
    assert d["camera"] == {"fx": 400.0, "fy": 400.0, "cx": 320.0, "cy": 240.0, "width": 640, "height": 480}


def test_synth_empty_scene_is_usage_error(tmp_path, capsys):
    with pytest.raises(SystemExit) as exc:
        run("synth", "--points", 0, "--lines", 0, "--out", tmp_path / "s.json")
    assert exc.value.code == 2
    assert "empty scene" in capsys.readouterr().err


def test_synth_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.json", tmp_path / "b.json"
    for p in (a, b):
        run("synth", "--points", 10, "--lines", 5, "--outlier-rate", 0.4, "--imu-sigma", 1.0, "--seed", 3, "--out", p)
    assert a.read_bytes() == b.read_bytes()


def test_synth_unwritable_path_is_io_error(tmp_path):
    assert run("synth", "--points", 5, "--out", tmp_path / "missing" / "s.json") == 3


def test_solve_matches_golden_fixture(capsys):
    exp = json.loads((FIXTURES / "expected_25p25l_60.json").read_text())
    assert run("solve", "--scene", FIXTURES / exp["scene"]) == 0
    got = json.loads(capsys.readouterr().out)
    pose = Pose(np.array(got["pose"]["R"]), np.array(got["pose"]["t"]))
    ref = Pose(np.array(exp["pose"]["R"]), np.array(exp["pose"]["t"]))
    dT, dR = pose_error(pose, ref)
    assert dT <= exp["tolerance"]["translation_m"] and dR <= exp["tolerance"]["rotation_deg"]
    assert got["consensus_point_ids"] == exp["consensus_point_ids"]
    assert got["consensus_line_ids"] == exp["consensus_line_ids"]
    truth = load_scene(FIXTURES / exp["scene"])
    dT, dR = pose_error(pose, truth.pose)
    assert dT < 0.1 and dR < 0.5


def test_solve_corrupted_json(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text("{ not json")
    assert run("solve", "--scene", bad) == 3
    assert "JSONDecodeError" in capsys.readouterr().err


def test_solve_missing_file(tmp_path):
    assert run("solve", "--scene", tmp_path / "nope.json") == 3


def test_solve_no_consensus_exit_code(tmp_path):
    scene = tmp_path / "two.json"
    run("synth", "--points", 2, "--seed", 1, "--out", scene)
    assert run("solve", "--scene", scene) == 4


def test_solve_voting_modes_and_trace(tmp_path, capsys):
    scene = FIXTURES / "scene_25p25l_60.json"
    trace = tmp_path / "trace.jsonl"
    assert run("solve", "--scene", scene, "--timings", "--trace", trace) == 0
    a = json.loads(capsys.readouterr().out)
    assert run("solve", "--scene", scene, "--voting", "dimension-wise") == 0
    b = json.loads(capsys.readouterr().out)
    print(f"consensus cardinality prioritized={a['cardinality']} dimension-wise={b['cardinality']}")
    assert a["translation_cardinality"] >= b["translation_cardinality"]
    assert {"tim", "rotation", "translation", "refine"} <= set(a["stage_timings"])
    recs = [json.loads(line) for line in trace.read_text().splitlines()]
    assert recs and all("lo" in r or "stage" in r for r in recs)


def test_bench_outlier_sweep_rows(tmp_path):
    out = tmp_path / "bench"
    assert run("bench", "--points", 12, "--outlier-sweep", "0.1:0.9:0.1", "--runs", 1, "--seed", 1, "--out", out) == 0
    rows = _rows(out / "sweep.csv")
    assert len(rows) == 9
    assert [float(r["outlier_rate"]) for r in rows] == pytest.approx([0.1 * k for k in range(1, 10)])
    assert rows[0]["fx"] == "400.0" and rows[0]["width"] == "640"
    assert len((out / "trials.jsonl").read_text().splitlines()) == 9


def test_bench_sigma_sweep_rows(tmp_path):
    out = tmp_path / "sigma"
    assert run("bench", "--points", 12, "--imu-sigma-sweep", "0:5:1", "--runs", 1, "--out", out) == 0
    rows = _rows(out / "sweep.csv")
    assert [float(r["gravity_noise_sigma_deg"]) for r in rows] == [0, 1, 2, 3, 4, 5]


def test_compare_three_solvers(tmp_path):
    out = tmp_path / "cmp"
    assert run("compare", "--points", 15, "--outlier-rate", 0.5, "--solvers", "ours,ours-dv,ransac",
               "--runs", 2, "--out", out) == 0
    assert [r["solver"] for r in _rows(out / "sweep.csv")] == ["ours", "ours-dv", "ransac"]


def test_bench_outputs_are_byte_identical_across_job_counts(tmp_path):
    outs = []
    for jobs in (1, 2):
        out = tmp_path / f"j{jobs}"
        run("bench", "--points", 12, "--outlier-sweep", "0.3,0.6", "--runs", 2, "--seed", 4,
            "--jobs", jobs, "--out", out)
        outs.append(out)
    for name in ("sweep.csv", "trials.jsonl"):
        assert (outs[0] / name).read_bytes() == (outs[1] / name).read_bytes()


def test_bench_usage_errors(tmp_path):
    for args in (("--solvers", "magic"), ("--outlier-sweep", "0.5:1.0:0.5"), ("--runs", 0),
                 ("--outlier-sweep", "0.1:0.2:0.1", "--imu-sigma-sweep", "0:1:1")):
        with pytest.raises(SystemExit) as exc:
            run("bench", "--points", 10, "--out", tmp_path / "x", *args)
        assert exc.value.code == 2


def test_export_plot_kinds(tmp_path):
    out = tmp_path / "sig"
    run("compare", "--points", 12, "--solvers", "ours,ours-dv", "--imu-sigma-sweep", "0:1:1", "--runs", 1, "--out", out)
    curve = tmp_path / "curve.csv"
    assert run("export-plot", "--in", out, "--kind", "success-curve", "--out", curve) == 0
    rows = _rows(curve)
    assert {r["series"] for r in rows} == {"ours", "ours-dv"} and len(rows) == 4
    assert list(rows[0]) == ["series", "x", "y"]
    timing = tmp_path / "timing.csv"
    assert run("export-plot", "--in", out, "--kind", "timing", "--out", timing) == 0
    assert {r["series"] for r in _rows(timing)} == {"ours", "ours-dv"}
    card = tmp_path / "card.csv"
    assert run("export-plot", "--in", out / "trials.jsonl", "--kind", "cardinality", "--out", card) == 0
    assert sum(int(r["y"]) for r in _rows(card)) == 4


def test_export_plot_errors(tmp_path):
    with pytest.raises(SystemExit) as exc:
        run("export-plot", "--in", tmp_path, "--kind", "histogram")
    assert exc.value.code == 2
    assert run("export-plot", "--in", tmp_path / "none", "--kind", "timing") == 3


def test_console_entry_point(tmp_path):
    out = tmp_path / "s.json"
    proc = subprocess.run([sys.executable, "-m", "cmaxloc", "synth", "--points", "6", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and out.exists()
