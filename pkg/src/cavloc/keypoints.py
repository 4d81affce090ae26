"""Labeled 2D localization points and the keypoint-set file format.

File format (one JSON object per line)::

    {"frame_id": "w0", "observer": "3", "frame": "local", "class": "pole",
     "x": 12.345678901, "y": -3.000000000, "source_id": "pole:7"}

``class`` is one of ``vehicle_center``, ``pole`` or ``planar``. ``x``/``y`` are
meters written with nine decimals. ``frame`` and ``source_id`` are optional.
Blank lines are ignored. An empty set is written as a single header record
without ``class``/``x``/``y``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .geometry import Transform2D


class PointClass(str, Enum):
    VEHICLE_CENTER = "vehicle_center"
    POLE = "pole"
    PLANAR = "planar"

    @property
    def is_anchor(self) -> bool:
        return self is not PointClass.PLANAR


ANCHOR_CLASSES = (PointClass.VEHICLE_CENTER, PointClass.POLE)


@dataclass(frozen=True)
class LabeledPoint:
    x: float
    y: float
    cls: PointClass
    # simulation ground truth only; the estimator never reads it
    source_id: str | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite point ({self.x}, {self.y})")
        object.__setattr__(self, "cls", PointClass(self.cls))

    @property
    def xy(self) -> tuple[float, float]:
        return (self.x, self.y)


@dataclass(frozen=True)
class KeypointSet:
    """Points one vehicle observed in a single frame.

    ``frame`` names the coordinate system the points live in: ``local``
    (the observer's own), ``ego`` or ``global``.
    """

    frame_id: str
    observer: str
    points: tuple[LabeledPoint, ...] = field(default_factory=tuple)
    frame: str = "local"

    def __post_init__(self) -> None:
        object.__setattr__(self, "points", tuple(self.points))

    def __len__(self) -> int:
        return len(self.points)

    def anchors(self) -> list[LabeledPoint]:
        return [p for p in self.points if p.cls.is_anchor]

    def planar(self) -> list[LabeledPoint]:
        return [p for p in self.points if p.cls is PointClass.PLANAR]

    def xy(self) -> np.ndarray:
        return points_xy(self.points)


def points_xy(points: Sequence[LabeledPoint]) -> np.ndarray:
    """(N, 2) float array of point coordinates."""
    if not points:
        return np.zeros((0, 2))
    return np.array([(p.x, p.y) for p in points], dtype=float)


def transform_points(points: Sequence[LabeledPoint], t: Transform2D) -> list[LabeledPoint]:
    if not points:
        return []
    moved = t.apply(points_xy(points))
    return [replace(p, x=float(x), y=float(y)) for p, (x, y) in zip(points, moved)]


def transform_set(s: KeypointSet, t: Transform2D, new_frame: str) -> KeypointSet:
    """Apply ``t`` to every point; classes and source ids are kept."""
    return replace(s, points=tuple(transform_points(s.points, t)), frame=new_frame)


def fps_downsample(points: Sequence[LabeledPoint], n_f: int) -> list[LabeledPoint]:
    """Furthest point sampling seeded at the first point.

    Each pick maximizes the distance to the nearest already-picked point;
    ties go to the lower input index.
    """
    if n_f < 1:
        raise ValueError("n_f must be >= 1")
    points = list(points)
    if len(points) <= n_f:
        return points
    xy = points_xy(points)
    chosen = [0]
    min_dist = np.linalg.norm(xy - xy[0], axis=1)
    # picked points drop out, so duplicates of a picked point are still eligible
    min_dist[0] = -np.inf
    for _ in range(n_f - 1):
        nxt = int(np.argmax(min_dist))
        chosen.append(nxt)
        min_dist = np.minimum(min_dist, np.linalg.norm(xy - xy[nxt], axis=1))
        min_dist[nxt] = -np.inf
    return [points[i] for i in chosen]


class KeypointFormatError(ValueError):
    """A keypoint file line violates the schema."""

    def __init__(self, path: str | Path, line_no: int, message: str):
        super().__init__(f"{path}:{line_no}: {message}")
        self.path = str(path)
        self.line_no = line_no


def _record(s: KeypointSet, p: LabeledPoint | None) -> str:
    parts = [
        f'"frame_id": {json.dumps(s.frame_id)}',
        f'"observer": {json.dumps(s.observer)}',
        f'"frame": {json.dumps(s.frame)}',
    ]
    if p is not None:
        parts += [
            f'"class": {json.dumps(p.cls.value)}',
            f'"x": {p.x:.9f}',
            f'"y": {p.y:.9f}',
        ]
        if p.source_id is not None:
            parts.append(f'"source_id": {json.dumps(p.source_id)}')
    return "{" + ", ".join(parts) + "}"


def dumps_keypoints(s: KeypointSet) -> str:
    if not s.points:
        return _record(s, None) + "\n"
    return "".join(_record(s, p) + "\n" for p in s.points)


def write_keypoints(path: str | Path, s: KeypointSet) -> None:
    Path(path).write_text(dumps_keypoints(s), encoding="utf-8")


def loads_keypoints(text: str, path: str | Path = "<string>") -> KeypointSet:
    frame_id = observer = None
    frame = "local"
    points: list[LabeledPoint] = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise KeypointFormatError(path, line_no, f"invalid JSON: {exc.msg}") from None
        if not isinstance(rec, dict):
            raise KeypointFormatError(path, line_no, "record must be an object")
        for key in ("frame_id", "observer"):
            if not isinstance(rec.get(key), str):
                raise KeypointFormatError(path, line_no, f"missing or non-string '{key}'")
        if frame_id is None:
            frame_id, observer = rec["frame_id"], rec["observer"]
            frame = rec.get("frame", "local")
        elif (rec["frame_id"], rec["observer"]) != (frame_id, observer):
            raise KeypointFormatError(path, line_no, "frame_id/observer differ from first record")
        if "class" not in rec and "x" not in rec and "y" not in rec:
            continue
        try:
            cls = PointClass(rec.get("class"))
        except ValueError:
            raise KeypointFormatError(
                path, line_no, f"unknown class {rec.get('class')!r}"
            ) from None
        x, y = rec.get("x"), rec.get("y")
        if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in (x, y)):
            raise KeypointFormatError(path, line_no, "x and y must be numbers")
        if not (math.isfinite(x) and math.isfinite(y)):
            raise KeypointFormatError(path, line_no, "x and y must be finite")
        sid = rec.get("source_id")
        if sid is not None and not isinstance(sid, str):
            raise KeypointFormatError(path, line_no, "source_id must be a string")
        points.append(LabeledPoint(float(x), float(y), cls, sid))
    if frame_id is None:
        raise KeypointFormatError(path, 0, "file contains no records")
    return KeypointSet(frame_id, observer, tuple(points), frame)


def read_keypoints(path: str | Path) -> KeypointSet:
    return loads_keypoints(Path(path).read_text(encoding="utf-8"), path)


def by_source(points: Iterable[LabeledPoint]) -> dict[str, LabeledPoint]:
    return {p.source_id: p for p in points if p.source_id is not None}
