"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 I/O or file-format error,
3 insufficient overlap (consensus not above ``--thr-cons``).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import experiments
from .estimation import RansacParams, ransac_correct
from .geometry import Pose2D, PoseNoise, compose, erroneous_relative_transform, relative_error_envelope
from .keypoints import KeypointFormatError, PointClass, read_keypoints, transform_set, write_keypoints
from .matching import ETA_99, MatchParams, epsilon1_from_noise
from .simulation import ScenarioConfig, generate_world, make_sample_pairs, observe, scene_to_dict

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_IO = 2
EXIT_NO_OVERLAP = 3

log = logging.getLogger("cavloc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message: str):  # argparse exits 2 by default; 2 is reserved for I/O
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _checked(kind, lo=None, hi=None, lo_open=False):
    def parse(text: str):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"invalid {kind.__name__} value: {text!r}") from None
        if isinstance(v, float) and not math.isfinite(v):
            raise argparse.ArgumentTypeError(f"{text!r} is not finite")
        if lo is not None and (v <= lo if lo_open else v < lo):
            raise argparse.ArgumentTypeError(f"{v} must be {'>' if lo_open else '>='} {lo}")
        if hi is not None and v > hi:
            raise argparse.ArgumentTypeError(f"{v} must be <= {hi}")
        return v

    return parse


nonneg = _checked(float, 0.0)
positive = _checked(float, 0.0, lo_open=True)
count = _checked(int, 1)
count0 = _checked(int, 0)
prob = _checked(float, 0.0, 1.0)
real = _checked(float)


def _add_scenario_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("scenario")
    g.add_argument("--r-c", type=positive, default=40.0, help="communication range in m (default: 40)")
    g.add_argument("--n-f", type=count, default=50, help="planar points kept by FPS (default: 50)")
    g.add_argument("--vehicles", type=count0, default=30, help="vehicles per world (default: 30)")
    g.add_argument("--extent", type=positive, default=200.0, help="world side length in m (default: 200)")
    g.add_argument(
        "--detection-noise",
        type=nonneg,
        nargs=3,
        metavar=("VEHICLE", "POLE", "PLANAR"),
        default=[0.1, 0.05, 0.05],
        help="keypoint noise sigma in m per class (default: 0.1 0.05 0.05)",
    )
    g.add_argument(
        "--detection-prob",
        type=prob,
        nargs=3,
        metavar=("VEHICLE", "POLE", "PLANAR"),
        default=[0.9, 0.9, 0.9],
        help="per-object detection probability per class (default: 0.9)",
    )
    g.add_argument("--max-coop", type=count, default=5, help="cooperative vehicles per ego (default: 5)")


def _scenario(args, sigma_xy: float = 0.4, sigma_r: float = 4.0) -> ScenarioConfig:
    classes = (PointClass.VEHICLE_CENTER, PointClass.POLE, PointClass.PLANAR)
    try:
        return ScenarioConfig(
            r_c=args.r_c,
            n_f=args.n_f,
            detection_noise_sigma=dict(zip(classes, args.detection_noise)),
            detection_prob=dict(zip(classes, args.detection_prob)),
            pose_noise=PoseNoise(sigma_xy, sigma_r),
            n_cooperative_max=args.max_coop,
            rng_seed=args.seed,
            n_vehicles=args.vehicles,
            extent=args.extent,
        )
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cavloc", description="Relative localization correction between two CAVs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("generate", help="write a synthetic scene, keypoint files and sample pairs")
    g.add_argument("--seed", type=count0, default=0, help="master seed (default: 0)")
    g.add_argument("--out", type=Path, required=True, help="scene JSON path")
    g.add_argument(
        "--keypoints-dir",
        type=Path,
        help="directory for per-vehicle keypoint files and pairs.json (default: <out stem>_keypoints)",
    )
    g.add_argument("--sigma-xy", type=nonneg, default=0.4, help="pose noise in m per axis (default: 0.4)")
    g.add_argument("--sigma-r", type=nonneg, default=4.0, help="heading noise in deg (default: 4)")
    _add_scenario_flags(g)

    c = sub.add_parser("correct", help="estimate the correction between two keypoint files")
    c.add_argument("--ego", type=Path, required=True, help="ego keypoint file (ego-local frame)")
    c.add_argument("--coop", type=Path, required=True, help="cooperative keypoint file (its local frame)")
    c.add_argument("--ego-pose", type=real, nargs=3, metavar=("X", "Y", "DEG"), default=[0.0, 0.0, 0.0])
    c.add_argument("--coop-pose", type=real, nargs=3, metavar=("X", "Y", "DEG"), default=[0.0, 0.0, 0.0])
    c.add_argument("--n-ransac", type=count, default=30, help="max RANSAC iterations (default: 30)")
    c.add_argument("--eta", type=positive, default=ETA_99, help="z-score for epsilon1 (default: 2.58)")
    c.add_argument("--r-c", type=positive, default=40.0, help="communication range in m (default: 40)")
    c.add_argument("--sigma-r", type=positive, default=4.0, help="assumed heading noise in deg (default: 4)")
    c.add_argument("--epsilon1", type=positive, help="override candidate radius in m (default: eta*r_c*sigma_r)")
    c.add_argument("--epsilon2", type=positive, default=1.0, help="consensus radius in m (default: 1)")
    c.add_argument("--thr-cons", type=count0, default=10, help="validity threshold on consensus (default: 10)")
    c.add_argument("--seed", type=count0, default=0)
    c.add_argument("--out", type=Path, help="write the corrected coop keypoints (ego frame)")

    s = sub.add_parser("sweep", help="run the parameter sweep and write the results table")
    s.add_argument("--sigma-xy", type=positive, nargs="+", default=list(experiments.SIGMA_XY_GRID),
                   help="pose noise grid in m (default: 0.2..1.0 step 0.2)")
    s.add_argument("--sigma-r", type=positive, nargs="+", default=list(experiments.SIGMA_R_GRID),
                   help="heading noise grid in deg (default: 2..10 step 2)")
    s.add_argument("--n-ransac", type=count, nargs="+", default=list(experiments.N_RANSAC_GRID),
                   help="iteration grid (default: 10..50 step 10)")
    s.add_argument("--thr-cons", type=count0, nargs="+", default=list(experiments.THR_CONS_GRID),
                   help="consensus thresholds (default: 2..10)")
    s.add_argument("--pairs", type=count, default=100, help="sample pairs per cell (default: 100)")
    s.add_argument("--min-shared", type=count0, default=0, help="keep pairs with at least this many shared anchors")
    s.add_argument("--eta", type=positive, default=ETA_99, help="z-score for epsilon1 (default: 2.58)")
    s.add_argument("--epsilon2", type=positive, default=1.0, help="consensus radius in m (default: 1)")
    s.add_argument("--threads", type=count, default=1)
    s.add_argument("--timing", choices=("wall", "cpu"), default="wall")
    s.add_argument("--timing-repeats", type=count, default=1, help="time each pair this many times, keep the fastest")
    s.add_argument("--seed", type=count0, default=0, help="master seed (default: 0)")
    s.add_argument("--out", type=Path, required=True, help="results table (CSV)")
    s.add_argument("--records", type=Path, help="raw per-pair records (JSON lines)")
    s.add_argument("--reports", type=Path, help="full reports (JSON lines)")
    _add_scenario_flags(s)

    e = sub.add_parser("envelope", help="min/max correction translation versus distance")
    e.add_argument("--ego-error", type=real, nargs=3, metavar=("DX", "DY", "DEG"), default=[-0.5, -0.5, -5.0])
    e.add_argument("--coop-error", type=real, nargs=3, metavar=("DX", "DY", "DEG"), default=[0.5, 0.5, 5.0])
    e.add_argument("--distances", type=nonneg, nargs=3, metavar=("START", "STOP", "STEP"), default=[0.0, 60.0, 5.0])
    e.add_argument("--orientations", type=_checked(int, 4), default=72)
    e.add_argument("--out", type=Path, help="CSV output (default: stdout)")
    return parser


def cmd_generate(args) -> int:
    config = _scenario(args, args.sigma_xy, args.sigma_r)
    world = generate_world(config, args.seed)
    kp_dir = args.keypoints_dir or args.out.with_name(args.out.stem + "_keypoints")
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        args.out.write_text(json.dumps(scene_to_dict(world), indent=2) + "\n", encoding="utf-8")
        kp_dir.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(args.seed)
        for v in world.vehicles:
            kp = observe(world, v.pose, config, rng, v.id, frame_id=str(args.seed))
            write_keypoints(kp_dir / f"vehicle_{v.id}.jsonl", kp)
        pairs = []
        if len(world.vehicles) >= 2:
            for p in make_sample_pairs(world, config, rng, frame_id=str(args.seed)):
                stem = f"pair_{p.ego_id}_{p.coop_id}"
                write_keypoints(kp_dir / f"{stem}_ego.jsonl", p.ego_set)
                write_keypoints(kp_dir / f"{stem}_coop.jsonl", p.coop_set)
                pairs.append(_pair_record(p, stem))
        (kp_dir / "pairs.json").write_text(json.dumps(pairs, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(
        f"vehicles={len(world.vehicles)} poles={len(world.poles)} "
        f"facades={len(world.facades)} pairs={len(pairs)} dropped={world.n_dropped}"
    )
    return EXIT_OK


def _pose_list(p: Pose2D) -> list[float]:
    return [p.x, p.y, p.heading_deg]


def _pair_record(p, stem: str) -> dict:
    return {
        "pair_id": p.pair_id,
        "ego_file": f"{stem}_ego.jsonl",
        "coop_file": f"{stem}_coop.jsonl",
        "ego_true": _pose_list(p.ego_true),
        "ego_err": _pose_list(p.ego_err),
        "coop_true": _pose_list(p.coop_true),
        "coop_err": _pose_list(p.coop_err),
        "gt_correction": {
            "dtheta_deg": p.gt_correction.dtheta_deg,
            "dx": p.gt_correction.dx,
            "dy": p.gt_correction.dy,
        },
        "n_shared_anchors": p.n_shared_anchors,
    }


def cmd_correct(args) -> int:
    try:
        ego = read_keypoints(args.ego)
        coop = read_keypoints(args.coop)
    except KeypointFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    ego_pose = Pose2D.from_degrees(*args.ego_pose)
    coop_pose = Pose2D.from_degrees(*args.coop_pose)
    t_rel = erroneous_relative_transform(ego_pose, coop_pose)
    coop_in_ego = transform_set(coop, t_rel, "ego")
    eps1 = args.epsilon1 or epsilon1_from_noise(args.eta, args.r_c, args.sigma_r)
    params = RansacParams(args.n_ransac, MatchParams(eps1, args.epsilon2, args.eta), rng_seed=args.seed)
    result = ransac_correct(ego, coop_in_ego, params)
    t = result.transform
    print(f"dtheta_deg={t.dtheta_deg:.6f}")
    print(f"dx_m={t.dx:.6f}")
    print(f"dy_m={t.dy:.6f}")
    print(f"n_cons={result.n_cons}")
    print(f"iterations={result.iterations_run}")
    print(f"pairs={len(result.correspondences)}")
    if args.out is not None:
        corrected = transform_set(coop, compose(t, t_rel), "ego")
        try:
            write_keypoints(args.out, corrected)
        except OSError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_IO
    if not result.valid_for(args.thr_cons):
        print(f"insufficient overlap: n_cons={result.n_cons} <= thr_cons={args.thr_cons}", file=sys.stderr)
        return EXIT_NO_OVERLAP
    return EXIT_OK


def cmd_sweep(args) -> int:
    base = _scenario(args)
    raw: list[str] = []

    def keep(sxy, sr, n, records):
        if args.records is not None:
            raw.append(experiments.dumps_records(records, sigma_xy=sxy, sigma_r=sr, n_ransac=n))

    try:
        reports = experiments.run_sweep(
            args.sigma_xy,
            args.sigma_r,
            args.n_ransac,
            args.thr_cons,
            n_pairs=args.pairs,
            master_seed=args.seed,
            base_config=base,
            min_shared_anchors=args.min_shared,
            threads=args.threads,
            timing=args.timing,
            eta=args.eta,
            epsilon2=args.epsilon2,
            timing_repeats=args.timing_repeats,
            on_records=keep,
        )
    except RuntimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.out.parent.mkdir(parents=True, exist_ok=True)
        experiments.write_results_table(args.out, reports)
        if args.records is not None:
            args.records.write_text("".join(raw), encoding="utf-8")
        if args.reports is not None:
            args.reports.write_text(experiments.dumps_reports(reports), encoding="utf-8")
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    for r in reports:
        rm = "no valid samples" if not r.has_valid else (
            f"rmse x={r.rmse_x:.3f} y={r.rmse_y:.3f} norm={r.rmse_norm:.3f} r={r.rmse_r:.3f}"
        )
        print(
            f"sxy={r.sigma_xy:g} sr={r.sigma_r:g} n={r.n_ransac} thr={r.thr_cons} "
            f"valid={r.valid_rate:.3f} {rm} fps={r.fps:.1f}"
        )
    return EXIT_OK


def cmd_envelope(args) -> int:
    start, stop, step = args.distances
    if step <= 0 or stop < start:
        raise UsageError("--distances needs START <= STOP and STEP > 0")
    n = math.floor((stop - start) / step + 1e-9)
    rows = [
        relative_error_envelope(tuple(args.ego_error), tuple(args.coop_error), start + k * step, args.orientations)
        for k in range(n + 1)
    ]
    out = open(args.out, "w", newline="", encoding="utf-8") if args.out else sys.stdout
    try:
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["distance_m", "dx_min_m", "dx_max_m", "dy_min_m", "dy_max_m", "dtheta_deg"])
        for r in rows:
            w.writerow([f"{r.distance:.6f}", f"{r.dx_min:.6f}", f"{r.dx_max:.6f}",
                        f"{r.dy_min:.6f}", f"{r.dy_max:.6f}", f"{r.dtheta_deg:.6f}"])
    finally:
        if out is not sys.stdout:
            out.close()
    return EXIT_OK


COMMANDS = {
    "generate": cmd_generate,
    "correct": cmd_correct,
    "sweep": cmd_sweep,
    "envelope": cmd_envelope,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"cavloc {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
