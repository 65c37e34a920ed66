import math

import numpy as np
import pytest

from cmaxloc import sinusoid
from cmaxloc.errors import DegenerateLine, DegeneratePair
from cmaxloc.geom import GravityPrior, yaw_pitch_roll
from cmaxloc.synthbench import SceneConfig, generate_scene
from cmaxloc.tim import (
    LineCorrespondence,
    PointCorrespondence,
    TimConstraint,
    YawInterval,
    build_all_tims,
    evaluate,
    line_tim,
    lower_bound_abs,
    point_tim,
    select_pairs,
)

from conftest import CAMERA, looking_pose, oracle_scene, pinhole


def _pair(rng, t_shift=None):
    yaw, prior, R, t = looking_pose(rng)
    while True:
        P = rng.uniform(-1, 1, (2, 3))
        U, z = pinhole(P, R, t)
        if (z > 0.1).all():
            break
    out = [PointCorrespondence(P[0], U[0], 2.0, 0), PointCorrespondence(P[1], U[1], 2.0, 1)]
    if t_shift is None:
        return out, yaw, prior
    U2, z2 = pinhole(P, R, t + t_shift)
    moved = [PointCorrespondence(P[0], U2[0], 2.0, 0), PointCorrespondence(P[1], U2[1], 2.0, 1)]
    return out, moved, yaw, prior, bool((z2 > 0.1).all())


@pytest.mark.parametrize("mode", ["paper_min", "propagated"])
def test_noise_free_pair_vanishes_at_true_yaw(mode):
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(1000):
        (ci, cj), yaw, prior = _pair(rng)
        worst = max(worst, abs(evaluate(point_tim(ci, cj, prior, CAMERA, mode), yaw)))
    assert worst < 1e-9


def test_translation_invariance():
    rng = np.random.default_rng(11)
    checked = 0
    while checked < 300:
        (a, b), (c, d), yaw, prior, ok = _pair(rng, rng.uniform(-0.5, 0.5, 3))
        if not ok:
            continue
        checked += 1
        r1 = evaluate(point_tim(a, b, prior, CAMERA), yaw)
        r2 = evaluate(point_tim(c, d, prior, CAMERA), yaw)
        assert abs(r1 - r2) < 1e-9


@pytest.mark.parametrize("mode", ["paper_min", "propagated"])
def test_outlier_pair_violates_bound(mode):
    # one inlier and one decoy-rendered outlier under the benchmark protocol
    violated = 0
    for k in range(1000):
        sc = generate_scene(SceneConfig(n_points=2, outlier_rate=0.5, rng_seed=1000 + k))
        yaw = yaw_pitch_roll(sc.pose.R)[0]
        tim = point_tim(sc.points[0], sc.points[1], sc.prior, sc.camera, mode)
        violated += not tim.satisfied(yaw)
    print(f"outlier pairs rejected at the true yaw ({mode}): {violated}/1000")
    assert violated >= 990


def test_propagated_bound_keeps_noisy_inliers():
    rng = np.random.default_rng(13)
    for _ in range(300):
        s = oracle_scene(rng, n_points=6, n_lines=3, noise=2.0)
        tims = build_all_tims(s.points, s.lines, s.prior, CAMERA, bound_mode="propagated")
        assert tims.satisfied(s.yaw).all()


def test_noise_free_line_vanishes_at_true_yaw():
    rng = np.random.default_rng(14)
    worst = 0.0
    for _ in range(1000):
        s = oracle_scene(rng, n_points=0, n_lines=1)
        worst = max(worst, abs(evaluate(line_tim(s.lines[0], s.prior, CAMERA), s.yaw)))
    assert worst < 1e-9


def test_vertical_line_is_trivial_without_tilt():
    # with zero pitch and roll the camera axis is the gravity axis, and the
    # rotated direction of a vertical line does not depend on yaw
    prior = GravityPrior(0.0, 0.0)
    t = np.array([0.2, -0.1, 4.0])
    ps, pe = np.array([0.3, 0.2, -0.5]), np.array([0.3, 0.2, 0.5])
    U, _ = pinhole(np.array([ps, pe]), np.eye(3), t)
    tim = line_tim(LineCorrespondence(ps, pe, U[0], U[1], 2.0, 0), prior, CAMERA)
    assert tim.is_trivial
    assert all(tim.satisfied(a) for a in np.linspace(-math.pi, math.pi, 17))


def test_outlier_line_violates_bound():
    rng = np.random.default_rng(15)
    violated = 0
    for _ in range(1000):
        s = oracle_scene(rng, n_points=0, n_lines=1, n_line_outliers=1)
        violated += not line_tim(s.lines[0], s.prior, CAMERA, "propagated").satisfied(s.yaw)
    assert violated >= 950


def test_degenerate_constructions():
    prior = GravityPrior(0.1, 0.2)
    a = PointCorrespondence([0, 0, 0], [100, 100], 2.0, 0)
    b = PointCorrespondence([1, 0, 0], [100, 100], 2.0, 1)
    with pytest.raises(DegeneratePair):
        point_tim(a, b, prior, CAMERA)
    lk = LineCorrespondence([0, 0, 0], [1, 0, 0], [100, 100], [100 + 1e-10, 100], 2.0, 0)
    with pytest.raises(DegenerateLine):
        line_tim(lk, prior, CAMERA)
    with pytest.raises(ValueError):
        PointCorrespondence([0, 0, 0], [1, 1], 0.0)
    with pytest.raises(ValueError):
        LineCorrespondence([0, 0, 0], [0, 0, 0], [1, 1], [2, 2])


def test_evaluate_examples():
    assert evaluate(TimConstraint(0.0, 0.0, 3.5, 1.0, ()), 1.234) == 3.5
    assert evaluate(TimConstraint(1.0, 0.0, 0.0, 1.0, ()), math.pi / 2) == pytest.approx(1.0)
    rng = np.random.default_rng(16)
    for _ in range(100):
        tim = TimConstraint(*rng.normal(size=3), 1.0, ())
        a = rng.uniform(-math.pi, math.pi)
        form = tim.sinusoid_form()
        assert form.a1 == pytest.approx(math.hypot(tim.d1, tim.d2))
        assert abs(form.evaluate(a) - evaluate(tim, a)) < 1e-12


def test_lower_bound_full_circle():
    assert lower_bound_abs(TimConstraint(0.3, 0.4, 2.0, 1.0, ()), YawInterval.full()) == pytest.approx(1.5)
    assert lower_bound_abs(TimConstraint(0.3, 0.4, -0.2, 1.0, ()), YawInterval.full()) == 0.0


def _random_interval(rng):
    a, b = sorted(rng.uniform(-math.pi, math.pi, 2))
    return YawInterval(a, b)


def test_lower_bound_is_sound_and_tight():
    rng = np.random.default_rng(17)
    for _ in range(100):
        tim = TimConstraint(*rng.normal(size=3), 1.0, ())
        iv = _random_interval(rng)
        lb = lower_bound_abs(tim, iv)
        samples = rng.uniform(iv.lo, iv.hi, 1000)
        assert np.all(lb <= np.abs(evaluate(tim, samples)) + 1e-12)
        xs = np.linspace(iv.lo, iv.hi, 100001)
        k = int(np.argmin(np.abs(evaluate(tim, xs))))
        # second dense grid around the coarse minimizer resolves steep zero crossings
        fine = np.linspace(xs[max(k - 1, 0)], xs[min(k + 1, len(xs) - 1)], 100001)
        grid_min = min(np.abs(evaluate(tim, xs)).min(), np.abs(evaluate(tim, fine)).min())
        assert grid_min - lb < 1e-6


def test_lower_bound_nesting():
    rng = np.random.default_rng(18)
    for _ in range(200):
        tim = TimConstraint(*rng.normal(size=3), 1.0, ())
        outer = _random_interval(rng)
        a, b = sorted(rng.uniform(outer.lo, outer.hi, 2))
        assert lower_bound_abs(tim, YawInterval(a, b)) >= lower_bound_abs(tim, outer)


def test_build_counts():
    rng = np.random.default_rng(19)
    s = oracle_scene(rng, n_points=50)
    tims = build_all_tims(s.points, [], s.prior, CAMERA)
    assert len(tims) + tims.skipped == 1225
    s = oracle_scene(rng, n_points=25, n_lines=25)
    tims = build_all_tims(s.points, s.lines, s.prior, CAMERA)
    assert len(tims) + tims.skipped == 325
    assert tims.origins[-1][0] == "line"
    s = oracle_scene(rng, n_points=2)
    assert len(build_all_tims(s.points, [], s.prior, CAMERA)) == 1


def test_vectorized_build_matches_single_constructors():
    rng = np.random.default_rng(20)
    s = oracle_scene(rng, n_points=6, n_lines=3, noise=1.0)
    for mode in ("paper_min", "propagated"):
        tims = build_all_tims(s.points, s.lines, s.prior, CAMERA, bound_mode=mode)
        singles = [point_tim(s.points[i], s.points[j], s.prior, CAMERA, mode) for i, j in select_pairs(6)]
        singles += [line_tim(l, s.prior, CAMERA, mode) for l in s.lines]
        for c, ref in zip(tims.constraints, singles):
            np.testing.assert_allclose(c.coef, ref.coef, atol=1e-15)
            assert c.origin == ref.origin
            for a in (-2.0, 0.3, 1.7):
                assert c.tolerance(a) == pytest.approx(ref.tolerance(a))


def test_pair_cap_is_deterministic_stride():
    pairs = select_pairs(10, 7)
    assert len(pairs) == 7 and pairs == select_pairs(10, 7)
    assert len(set(pairs)) == 7
    assert select_pairs(4) == [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)]


def test_relaxed_test_dominates_pointwise():
    rng = np.random.default_rng(21)
    s = oracle_scene(rng, n_points=8, n_lines=2, noise=2.0, n_point_outliers=3)
    tims = build_all_tims(s.points, s.lines, s.prior, CAMERA, bound_mode="propagated")
    for _ in range(50):
        iv = _random_interval(rng)
        relaxed = tims.relaxed_satisfied(iv.lo, iv.hi)
        for a in np.linspace(iv.lo, iv.hi, 40):
            assert np.all(relaxed | ~tims.satisfied(a))
