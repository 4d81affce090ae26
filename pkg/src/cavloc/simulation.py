"""Synthetic junction scenes standing in for a cooperative-perception dataset.

All randomness flows through ``numpy.random.Generator`` (PCG64 bit
generator, ziggurat normals), so a seed reproduces the same scene, the same
observations and the same pose errors on every platform numpy supports.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from shapely.geometry import Polygon

from .geometry import Pose2D, PoseNoise, Transform2D, erroneous_relative_transform, ground_truth_correction
from .keypoints import KeypointSet, LabeledPoint, PointClass, by_source, fps_downsample, transform_set

log = logging.getLogger(__name__)

SCENE_SCHEMA_VERSION = 1

DEFAULT_DETECTION_NOISE = {
    PointClass.VEHICLE_CENTER: 0.1,
    PointClass.POLE: 0.05,
    PointClass.PLANAR: 0.05,
}
DEFAULT_DETECTION_PROB = {c: 0.9 for c in PointClass}


@dataclass(frozen=True)
class Vehicle:
    id: str
    pose: Pose2D
    length: float = 4.5
    width: float = 1.8

    def footprint(self) -> Polygon:
        c, s = math.cos(self.pose.theta), math.sin(self.pose.theta)
        hl, hw = self.length / 2, self.width / 2
        corners = [(hl, hw), (-hl, hw), (-hl, -hw), (hl, -hw)]
        return Polygon(
            [(self.pose.x + c * u - s * v, self.pose.y + s * u + c * v) for u, v in corners]
        )


@dataclass(frozen=True)
class FacadeSegment:
    start: tuple[float, float]
    end: tuple[float, float]
    spacing: float = 0.5

    def discretize(self) -> np.ndarray:
        p0, p1 = np.asarray(self.start), np.asarray(self.end)
        n = max(1, math.floor(float(np.linalg.norm(p1 - p0)) / self.spacing + 1e-9))
        return p0 + np.linspace(0.0, 1.0, n + 1)[:, None] * (p1 - p0)


@dataclass(frozen=True)
class WorldScene:
    vehicles: tuple[Vehicle, ...]
    poles: tuple[tuple[float, float], ...]
    facades: tuple[FacadeSegment, ...]
    extent: float
    # vehicles that could not be placed without overlap
    n_dropped: int = 0

    def vehicle(self, vid: str) -> Vehicle:
        for v in self.vehicles:
            if v.id == vid:
                return v
        raise KeyError(vid)


@dataclass(frozen=True)
class ScenarioConfig:
    r_c: float = 40.0
    n_f: int = 50
    detection_noise_sigma: dict = field(default_factory=lambda: dict(DEFAULT_DETECTION_NOISE))
    detection_prob: dict = field(default_factory=lambda: dict(DEFAULT_DETECTION_PROB))
    pose_noise: PoseNoise = field(default_factory=lambda: PoseNoise(0.4, 4.0))
    n_cooperative_max: int = 5
    rng_seed: int = 0
    # world layout
    n_vehicles: int = 30
    extent: float = 200.0
    road_half_width: float = 7.0
    pole_spacing: float = 10.0
    facade_setback: float = 6.0
    facade_spacing: float = 0.5
    heading_jitter_deg: float = 2.0

    def __post_init__(self) -> None:
        if self.r_c <= 0:
            raise ValueError("r_c must be positive")
        if self.n_f < 1:
            raise ValueError("n_f must be >= 1")
        if self.n_cooperative_max < 1:
            raise ValueError("n_cooperative_max must be >= 1")
        if self.n_vehicles < 0:
            raise ValueError("n_vehicles must be >= 0")
        if self.extent <= 4 * (self.road_half_width + self.facade_setback):
            raise ValueError("extent too small for the junction layout")
        for c in PointClass:
            p = self.detection_prob[c]
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"detection probability for {c.value} outside [0, 1]")
            if self.detection_noise_sigma[c] < 0:
                raise ValueError(f"negative detection noise for {c.value}")


@dataclass(frozen=True)
class SamplePair:
    """One ego/cooperative pair with everything needed to score a correction."""

    pair_id: str
    ego_id: str
    coop_id: str
    ego_true: Pose2D
    ego_err: Pose2D
    coop_true: Pose2D
    coop_err: Pose2D
    ego_set: KeypointSet
    coop_set: KeypointSet
    gt_correction: Transform2D

    def coop_in_ego(self) -> KeypointSet:
        """Coop keypoints moved into the ego frame with the erroneous poses."""
        return transform_set(self.coop_set, erroneous_relative_transform(self.ego_err, self.coop_err), "ego")

    def shared_anchor_ids(self) -> set[str]:
        ego = by_source(self.ego_set.anchors())
        coop = by_source(self.coop_set.anchors())
        return set(ego) & set(coop)

    @property
    def n_shared_anchors(self) -> int:
        return len(self.shared_anchor_ids())


def _jittered_positions(lo: float, hi: float, spacing: float, rng: np.random.Generator) -> list[float]:
    out = []
    s = lo + rng.uniform(0, spacing)
    while s < hi:
        out.append(float(s + rng.uniform(-0.2, 0.2) * spacing))
        s += spacing
    return [v for v in out if lo <= v <= hi]


def generate_world(config: ScenarioConfig, rng_seed: int | None = None) -> WorldScene:
    """A four-arm junction: two crossing roads through the origin.

    Poles line both edges of each road, facades run parallel to the roads
    behind them and vehicles sit in one of four lanes per road.
    """
    rng = np.random.default_rng(config.rng_seed if rng_seed is None else rng_seed)
    half = config.extent / 2
    w = config.road_half_width
    pole_off = w + 1.0
    fac_off = w + config.facade_setback
    margin = 1.0

    poles: list[tuple[float, float]] = []
    for along_x in (True, False):
        for side in (-1.0, 1.0):
            for lo, hi in ((-half + margin, -pole_off - 2), (pole_off + 2, half - margin)):
                for s in _jittered_positions(lo, hi, config.pole_spacing, rng):
                    poles.append((s, side * pole_off) if along_x else (side * pole_off, s))

    facades: list[FacadeSegment] = []
    for along_x in (True, False):
        for side in (-1.0, 1.0):
            for lo, hi in ((-half + margin, -fac_off - 1), (fac_off + 1, half - margin)):
                s = lo
                while s < hi - 5:
                    length = rng.uniform(15, 40)
                    e = min(s + length, hi)
                    a, b = (s, side * fac_off), (e, side * fac_off)
                    if not along_x:
                        a, b = a[::-1], b[::-1]
                    facades.append(FacadeSegment(a, b, config.facade_spacing))
                    s = e + rng.uniform(3, 10)

    vehicles: list[Vehicle] = []
    footprints: list[Polygon] = []
    dropped = 0
    lane_offsets = (-0.75 * w, -0.25 * w, 0.25 * w, 0.75 * w)
    jitter = math.radians(config.heading_jitter_deg)
    for i in range(config.n_vehicles):
        for _ in range(50):
            along_x = bool(rng.integers(2))
            lane = lane_offsets[int(rng.integers(4))]
            s = rng.uniform(-half + 5, half - 5)
            # right-hand traffic: lanes with negative offset drive in +s
            direction = 0.0 if lane < 0 else math.pi
            if along_x:
                x, y, heading = s, lane, direction
            else:
                x, y, heading = -lane, s, direction + math.pi / 2
            v = Vehicle(
                id=str(i),
                pose=Pose2D(float(x), float(y), heading + rng.normal(0.0, jitter)),
                length=float(rng.uniform(4.2, 4.8)),
                width=float(rng.uniform(1.7, 1.9)),
            )
            fp = v.footprint()
            if not any(fp.intersects(o) for o in footprints):
                vehicles.append(v)
                footprints.append(fp)
                break
        else:
            dropped += 1
    if dropped:
        log.warning("placed %d of %d vehicles without overlap", len(vehicles), config.n_vehicles)
    return WorldScene(tuple(vehicles), tuple(poles), tuple(facades), config.extent, dropped)


def observe(
    world: WorldScene,
    observer_pose: Pose2D,
    config: ScenarioConfig,
    rng: np.random.Generator,
    observer_id: str | None = None,
    frame_id: str = "0",
) -> KeypointSet:
    """Simulated detector output of one vehicle, in its own (true) local frame.

    Objects within ``config.r_c`` are detected with their class probability
    and perturbed with class-specific Gaussian noise. Facade points are
    thinned with furthest point sampling to ``config.n_f``.
    """
    to_local = Transform2D(observer_pose.theta, observer_pose.x, observer_pose.y).inverse()
    origin = observer_pose.position
    noise, prob = config.detection_noise_sigma, config.detection_prob
    points: list[LabeledPoint] = []

    def detect(xy: np.ndarray, cls: PointClass, ids: list[str]) -> list[LabeledPoint]:
        if len(xy) == 0:
            return []
        xy = np.asarray(xy, dtype=float).reshape(-1, 2)
        in_range = np.linalg.norm(xy - origin, axis=1) <= config.r_c
        seen = rng.uniform(size=len(xy)) < prob[cls]
        jitter = rng.normal(0.0, noise[cls], size=xy.shape)
        keep = np.flatnonzero(in_range & seen)
        local = to_local.apply(xy[keep]) + jitter[keep]
        return [LabeledPoint(float(x), float(y), cls, ids[k]) for k, (x, y) in zip(keep, local)]

    others = [v for v in world.vehicles if v.id != observer_id]
    points += detect(
        np.array([v.pose.position for v in others]).reshape(-1, 2),
        PointClass.VEHICLE_CENTER,
        [f"vehicle:{v.id}" for v in others],
    )
    points += detect(
        np.array(world.poles).reshape(-1, 2), PointClass.POLE, [f"pole:{k}" for k in range(len(world.poles))]
    )
    facade_xy, facade_ids = [], []
    for j, seg in enumerate(world.facades):
        pts = seg.discretize()
        facade_xy.append(pts)
        facade_ids += [f"facade:{j}:{k}" for k in range(len(pts))]
    planar = detect(
        np.concatenate(facade_xy) if facade_xy else np.zeros((0, 2)), PointClass.PLANAR, facade_ids
    )
    points += fps_downsample(planar, config.n_f) if planar else []
    return KeypointSet(frame_id, observer_id if observer_id is not None else "?", tuple(points), "local")


def inject_pose_error(pose: Pose2D, noise: PoseNoise, rng: np.random.Generator) -> Pose2D:
    """Add zero-mean Gaussian error: sigma_xy meters to x and y, sigma_r degrees to heading."""
    ex, ey = rng.normal(0.0, noise.sigma_xy, size=2)
    er = rng.normal(0.0, noise.sigma_r)
    return Pose2D(pose.x + float(ex), pose.y + float(ey), pose.theta + math.radians(float(er)))


def make_sample_pairs(
    world: WorldScene,
    config: ScenarioConfig,
    rng: np.random.Generator,
    ego_id: str | None = None,
    frame_id: str = "0",
) -> list[SamplePair]:
    """Pick an ego vehicle and pair it with up to ``n_cooperative_max`` in-range vehicles."""
    if len(world.vehicles) < 2:
        raise ValueError("need at least two vehicles to form a pair")
    if ego_id is None:
        ego = world.vehicles[int(rng.integers(len(world.vehicles)))]
    else:
        ego = world.vehicle(ego_id)
    in_range = [
        v
        for v in world.vehicles
        if v.id != ego.id and np.linalg.norm(v.pose.position - ego.pose.position) <= config.r_c
    ]
    if len(in_range) > config.n_cooperative_max:
        pick = sorted(rng.choice(len(in_range), size=config.n_cooperative_max, replace=False))
        in_range = [in_range[k] for k in pick]
    if not in_range:
        return []

    ego_err = inject_pose_error(ego.pose, config.pose_noise, rng)
    ego_set = observe(world, ego.pose, config, rng, ego.id, frame_id)
    pairs = []
    for coop in in_range:
        coop_err = inject_pose_error(coop.pose, config.pose_noise, rng)
        coop_set = observe(world, coop.pose, config, rng, coop.id, frame_id)
        pairs.append(
            SamplePair(
                pair_id=f"{frame_id}/{ego.id}-{coop.id}",
                ego_id=ego.id,
                coop_id=coop.id,
                ego_true=ego.pose,
                ego_err=ego_err,
                coop_true=coop.pose,
                coop_err=coop_err,
                ego_set=ego_set,
                coop_set=coop_set,
                gt_correction=ground_truth_correction(ego.pose, coop.pose, ego_err, coop_err),
            )
        )
    return pairs


# -- scene files ---------------------------------------------------------------


def scene_to_dict(world: WorldScene) -> dict:
    return {
        "schema_version": SCENE_SCHEMA_VERSION,
        "units": {"length": "m", "heading": "deg"},
        "extent": world.extent,
        "vehicles": [
            {
                "id": v.id,
                "x": v.pose.x,
                "y": v.pose.y,
                "heading_deg": v.pose.heading_deg,
                "length": v.length,
                "width": v.width,
            }
            for v in world.vehicles
        ],
        "poles": [list(p) for p in world.poles],
        "facades": [
            {"start": list(f.start), "end": list(f.end), "spacing": f.spacing} for f in world.facades
        ],
    }


def scene_from_dict(d: dict) -> WorldScene:
    version = d.get("schema_version")
    if version != SCENE_SCHEMA_VERSION:
        raise ValueError(f"unsupported scene schema_version {version!r}")
    vehicles = tuple(
        Vehicle(
            str(v["id"]),
            Pose2D.from_degrees(v["x"], v["y"], v["heading_deg"]),
            float(v["length"]),
            float(v["width"]),
        )
        for v in d["vehicles"]
    )
    poles = tuple((float(x), float(y)) for x, y in d["poles"])
    facades = tuple(
        FacadeSegment(tuple(f["start"]), tuple(f["end"]), float(f["spacing"])) for f in d["facades"]
    )
    return WorldScene(vehicles, poles, facades, float(d["extent"]))


def write_scene(path: str | Path, world: WorldScene) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(world), indent=2) + "\n", encoding="utf-8")


def read_scene(path: str | Path) -> WorldScene:
    return scene_from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
