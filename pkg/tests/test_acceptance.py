"""End-to-end acceptance checks, one test per criterion.

Each test records a single PASS/FAIL line (shown in the terminal summary)
and then asserts, so a failure is both visible in the summary and fails
the run.
"""

import csv
import io
import math
import time

import numpy as np
import pytest
from conftest import make_scene, random_transform

from cavloc.cli import main
from cavloc.estimation import (
    DegenerateGeometryError,
    RansacParams,
    cal_tf,
    grid_search_correct,
    ransac_correct,
)
from cavloc.experiments import collect_pairs, make_report, residual, run_cell
from cavloc.geometry import (
    Pose2D,
    PoseNoise,
    Transform2D,
    erroneous_relative_transform,
    ground_truth_correction,
    relative_error_envelope,
    wrap_angle,
)
from cavloc.keypoints import LabeledPoint, PointClass
from cavloc.matching import MatchParams, count_consensus, epsilon1_from_noise
from cavloc.simulation import ScenarioConfig

RESULTS: dict[int, str] = {}


def record(n, ok, detail):
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    RESULTS[n] = line
    print(line)
    assert ok, line


HEADLINE = dict(sigma_xy=0.4, sigma_r=4.0, n_ransac=30, thr_cons=10)


@pytest.fixture(scope="module")
def headline_run():
    t0 = time.perf_counter()
    config = ScenarioConfig(pose_noise=PoseNoise(HEADLINE["sigma_xy"], HEADLINE["sigma_r"]))
    pairs = collect_pairs(config, 200, master_seed=2024, min_shared_anchors=15)
    records = run_cell(pairs, HEADLINE["sigma_r"], HEADLINE["n_ransac"], master_seed=2024)
    elapsed = time.perf_counter() - t0
    return pairs, records, elapsed


def test_criterion_01_headline_accuracy(headline_run):
    pairs, records, elapsed = headline_run
    rep = make_report(records, **HEADLINE)
    ok = (
        len(pairs) >= 200
        and min(p.n_shared_anchors for p in pairs) >= 15
        and rep.has_valid
        and rep.rmse_x < 0.2
        and rep.rmse_y < 0.2
        and rep.rmse_r < 1.0
        and elapsed < 60.0
    )
    detail = (
        f"pairs={len(pairs)} valid={rep.n_valid} rmse_x={rep.rmse_x:.4f} m rmse_y={rep.rmse_y:.4f} m "
        f"rmse_r={rep.rmse_r:.4f} deg runtime={elapsed:.1f} s"
        if rep.has_valid
        else f"pairs={len(pairs)} no valid samples"
    )
    record(1, ok, detail)


def test_criterion_02_rotation_concentration(headline_run):
    _, records, _ = headline_run
    valid = [r for r in records if r.n_cons > HEADLINE["thr_cons"]]
    share = sum(abs(r.e_r) < 1.0 for r in valid) / len(valid) if valid else 0.0
    record(2, share >= 0.90, f"{share:.1%} of {len(valid)} valid records have |e_r| < 1 deg")


N_RANSAC_STEPS = (10, 20, 30, 40, 50)


def test_criterion_03_trends():
    config = ScenarioConfig(pose_noise=PoseNoise(0.4, 4.0))
    pairs = collect_pairs(config, 100, master_seed=77)
    # timing rounds interleave the N_ransac cells so clock drift hits all of them
    # alike; each pair keeps its fastest run
    best: dict[int, list] = {}
    for _ in range(5):
        for n in N_RANSAC_STEPS:
            records = run_cell(pairs, 4.0, n, master_seed=77, timing="cpu")
            if n not in best:
                best[n] = records
            else:
                best[n] = [a if a.runtime <= b.runtime else b for a, b in zip(best[n], records)]
    reports = {n: [make_report(best[n], 0.4, 4.0, n, thr, "cpu") for thr in range(2, 11)] for n in N_RANSAC_STEPS}

    rates = [reports[n][8].valid_rate for n in N_RANSAC_STEPS]
    violations = sum(a > b for a, b in zip(rates, rates[1:]))
    fps = [reports[n][0].fps for n in N_RANSAC_STEPS]
    fps_ok = all(a > b for a, b in zip(fps, fps[1:]))
    thr_ok = all(
        a.valid_rate >= b.valid_rate for n in N_RANSAC_STEPS for a, b in zip(reports[n], reports[n][1:])
    )
    ok = violations <= 1 and fps_ok and thr_ok
    detail = (
        f"(a) valid_rate@thr10={['%.2f' % r for r in rates]} violations={violations}; "
        f"(b) fps={['%.0f' % f for f in fps]}; (c) monotone in thr_cons={thr_ok}"
    )
    record(3, ok, detail)


def test_criterion_04_error_propagation():
    rng = np.random.default_rng(404)
    worst_m, worst_rot = 0.0, 0.0
    for _ in range(10_000):
        ego = Pose2D(*rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi))
        coop = Pose2D(*rng.uniform(-100, 100, 2), rng.uniform(-math.pi, math.pi))
        d0 = (*rng.normal(0, 1.0, 2), math.radians(rng.normal(0, 10)))
        di = (*rng.normal(0, 1.0, 2), math.radians(rng.normal(0, 10)))
        ego_err = Pose2D(ego.x + d0[0], ego.y + d0[1], ego.theta + d0[2])
        coop_err = Pose2D(coop.x + di[0], coop.y + di[1], coop.theta + di[2])
        dt = ground_truth_correction(ego, coop, ego_err, coop_err)
        lhs = (dt @ erroneous_relative_transform(ego_err, coop_err)).matrix
        rhs = erroneous_relative_transform(ego, coop).matrix
        worst_m = max(worst_m, float(np.abs(lhs - rhs).max()))
        worst_rot = max(worst_rot, abs(wrap_angle(dt.dtheta - (d0[2] - di[2]))))
    ok = worst_m < 1e-10 and worst_rot < 1e-12
    record(4, ok, f"max matrix error={worst_m:.2e} max rotation error={worst_rot:.2e} rad over 10000 draws")


def test_criterion_05_envelope():
    ego_err, coop_err = (-0.5, -0.5, -5.0), (0.5, 0.5, 5.0)
    distances = np.arange(0.0, 61.0, 5.0)
    envs = [relative_error_envelope(ego_err, coop_err, float(d)) for d in distances]
    # constant: bit-identical at every distance; 10 deg up to the deg/rad round trip
    rotation_ok = len({e.dtheta for e in envs}) == 1 and abs(abs(envs[0].dtheta_deg) - 10.0) < 1e-12

    # magnitude of the translation envelope: largest offset in either axis
    mag = np.array([max(abs(e.dx_min), abs(e.dx_max), abs(e.dy_min), abs(e.dy_max)) for e in envs])
    slope, intercept = np.polyfit(distances, mag, 1)
    pred = slope * distances + intercept
    r2 = 1.0 - float(((mag - pred) ** 2).sum() / ((mag - mag.mean()) ** 2).sum())

    # closed form: chord swept by the coop heading error plus the position offset
    chord = 2.0 * abs(math.sin(math.radians(coop_err[2]) / 2.0))
    oracle = distances * chord + math.hypot(coop_err[0] - ego_err[0], coop_err[1] - ego_err[1])
    oracle_gap = float(np.abs(mag - oracle).max())
    ok = rotation_ok and r2 > 0.999 and oracle_gap < 0.05 * oracle.max()
    record(
        5,
        ok,
        f"rotation={envs[0].dtheta_deg!r} deg (constant, |.|=10: {rotation_ok}) "
        f"R^2={r2:.6f} slope={slope:.4f} m/m closed-form gap={oracle_gap:.3f} m",
    )


def test_criterion_06_epsilon1():
    eps = epsilon1_from_noise(2.58, 40, 4)
    record(6, abs(eps - 7.205) <= 0.001, f"epsilon1={eps:.6f} m")


def test_criterion_07_cal_tf():
    rng = np.random.default_rng(707)
    worst = 0.0
    for _ in range(1000):
        truth = random_transform(rng, max_xy=100.0)
        a = rng.uniform(-100, 100, size=(int(rng.integers(2, 40)), 2))
        est = cal_tf(list(zip(a, truth.apply(a))))
        worst = max(
            worst,
            abs(wrap_angle(est.dtheta - truth.dtheta)),
            abs(est.dx - truth.dx),
            abs(est.dy - truth.dy),
        )
    raised = 0
    for bad in ([], [((1, 2), (3, 4))], [((1, 2), (0, 0)), ((1, 2), (5, 5))]):
        try:
            cal_tf(bad)
        except DegenerateGeometryError:
            raised += 1
    record(7, worst < 1e-9 and raised == 3, f"max parameter error={worst:.2e}; degenerate inputs raised {raised}/3")


def brute_consensus(ego, coop, eps2):
    pairs = []
    for bi, b in enumerate(coop):
        best = None
        for ai, a in enumerate(ego):
            if a.cls is b.cls:
                d = math.hypot(b.x - a.x, b.y - a.y)
                if best is None or d < best[0]:
                    best = (d, ai)
        if best is not None and best[0] < eps2:
            pairs.append((bi, best[1]))
    return len(pairs), pairs


def test_criterion_08_consensus_oracle():
    rng = np.random.default_rng(808)
    classes = list(PointClass)
    mismatches = 0
    largest = 0
    for k in range(100):
        n_ego = 1000 if k % 10 == 0 else int(rng.integers(1, 400))
        n_coop = int(rng.integers(1, 1001)) if k % 10 == 0 else int(rng.integers(1, 400))
        pts = lambda n: [
            LabeledPoint(float(x), float(y), classes[int(c)])
            for (x, y), c in zip(rng.uniform(-60, 60, (n, 2)), rng.integers(3, size=n))
        ]
        ego, coop = pts(n_ego), pts(n_coop)
        eps2 = float(rng.uniform(0.3, 3.0))
        mismatches += count_consensus(ego, coop, eps2) != brute_consensus(ego, coop, eps2)
        largest = max(largest, n_ego, n_coop)
    record(8, mismatches == 0, f"{100 - mismatches}/100 instances match brute force (largest set {largest} points)")


def test_criterion_09_grid_cross_check():
    rng = np.random.default_rng(909)
    wins = 0
    for _ in range(100):
        truth = Transform2D.from_degrees(rng.uniform(-2, 2), *rng.uniform(-1, 1, 2))
        ego, coop = make_scene(
            rng, int(rng.integers(3, 9)), truth, n_ego_only=3, n_coop_only=3, n_planar=10, noise=0.05
        )
        params = RansacParams(match=MatchParams.from_noise(), exhaustive=True)
        r_est = ransac_correct(ego, coop, params).transform
        g_est = grid_search_correct(ego, coop, 1.0, 1.0, 2.0, resolutions=(0.1, 0.5)).transform
        r_res = math.hypot(*residual(r_est, truth, 0.0)[:2])
        g_res = math.hypot(*residual(g_est, truth, 0.0)[:2])
        wins += r_res <= g_res + 0.05
    record(9, wins >= 95, f"ransac within grid residual + 0.05 m in {wins}/100 scenes")


def _drop_fps(text):
    rows = list(csv.DictReader(io.StringIO(text)))
    return [{k: v for k, v in r.items() if k != "fps"} for r in rows]


def test_criterion_10_determinism(tmp_path, capsys):
    outputs = {}
    for run_id in ("a", "b"):
        d = tmp_path / run_id
        d.mkdir()
        assert main(["generate", "--seed", "11", "--out", str(d / "scene.json")]) == 0
        kp = d / "scene_keypoints"
        files = sorted(p.name for p in kp.iterdir())
        outputs[("generate", run_id)] = [(n, (kp / n).read_text()) for n in files]
        pair = next(n for n in files if n.endswith("_ego.jsonl"))
        capsys.readouterr()
        main(["correct", "--ego", str(kp / pair), "--coop", str(kp / pair.replace("_ego", "_coop")), "--seed", "3"])
        outputs[("correct", run_id)] = capsys.readouterr().out
    for threads in ("1", "4"):
        out = tmp_path / f"sweep_{threads}.csv"
        rc = main(
            ["sweep", "--sigma-xy", "0.4", "0.8", "--sigma-r", "4", "--n-ransac", "10", "30",
             "--thr-cons", "5", "10", "--pairs", "8", "--seed", "5", "--threads", threads, "--out", str(out)]
        )
        assert rc == 0
        outputs[("sweep", threads)] = _drop_fps(out.read_text())
    capsys.readouterr()
    same = {
        "generate": outputs[("generate", "a")] == outputs[("generate", "b")],
        "correct": outputs[("correct", "a")] == outputs[("correct", "b")],
        "sweep threads 1 vs 4": outputs[("sweep", "1")] == outputs[("sweep", "4")],
    }
    record(10, all(same.values()), " ".join(f"{k}={'identical' if v else 'DIFFERENT'}" for k, v in same.items()))
