"""Class-constrained nearest-neighbor matching and consensus counting.

Search is exact brute force over per-class numpy arrays. Point counts per
frame are in the hundreds, where this beats building a tree, and argmin's
first-index rule gives the lowest-index tie break for free.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .keypoints import LabeledPoint, PointClass, points_xy

ETA_99 = 2.58  # two-sided 99% z-score


def epsilon1_from_noise(eta: float, r_c: float, sigma_r: float) -> float:
    """Candidate search radius in meters from the heading noise (degrees).

    ``r_c * sigma_r`` in radians is the position spread a heading error of
    one sigma produces at the edge of communication range.
    """
    if eta <= 0 or r_c <= 0 or sigma_r <= 0:
        raise ValueError("eta, r_c and sigma_r must be positive")
    return eta * r_c * sigma_r * math.pi / 180.0


@dataclass(frozen=True)
class MatchParams:
    epsilon1: float
    epsilon2: float = 1.0
    eta: float = ETA_99
    k_neighbors: int = 2

    def __post_init__(self) -> None:
        if self.epsilon1 <= 0 or self.epsilon2 <= 0:
            raise ValueError("epsilon1 and epsilon2 must be positive")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.k_neighbors < 1:
            raise ValueError("k_neighbors must be >= 1")

    @classmethod
    def from_noise(
        cls, r_c: float = 40.0, sigma_r: float = 4.0, eta: float = ETA_99, epsilon2: float = 1.0
    ) -> "MatchParams":
        return cls(epsilon1_from_noise(eta, r_c, sigma_r), epsilon2, eta)


@dataclass(frozen=True)
class MatchCandidate:
    """A cooperative anchor and its nearest same-class ego anchors.

    Indices refer to positions in the lists passed to ``build_candidates``.
    """

    b: LabeledPoint
    neighbors: tuple[LabeledPoint, ...]
    b_index: int
    neighbor_indices: tuple[int, ...]
    distances: tuple[float, ...]


class ClassIndex:
    """Exact nearest-neighbor lookup restricted to points of the same class."""

    def __init__(self, points: Sequence[LabeledPoint]):
        self.size = len(points)
        xy = points_xy(points)
        cls = np.array([p.cls.value for p in points], dtype=object)
        self._groups: dict[PointClass, tuple[np.ndarray, np.ndarray]] = {}
        for c in PointClass:
            idx = np.flatnonzero(cls == c.value) if len(points) else np.zeros(0, dtype=int)
            if idx.size:
                self._groups[c] = (idx, xy[idx])

    def class_xy(self, c: PointClass) -> np.ndarray:
        group = self._groups.get(c)
        return group[1] if group else np.zeros((0, 2))

    def distances(self, c: PointClass, query: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Distance matrix (len(query), n_c) to class-``c`` points and their indices."""
        idx, ref = self._groups.get(c, (np.zeros(0, dtype=int), np.zeros((0, 2))))
        diff_x = query[:, 0:1] - ref[None, :, 0]
        diff_y = query[:, 1:2] - ref[None, :, 1]
        return np.sqrt(diff_x * diff_x + diff_y * diff_y), idx

    def nearest_within(
        self, query: np.ndarray, classes: Sequence[PointClass], radius: float
    ) -> np.ndarray:
        """Index of the nearest same-class point within ``radius`` (strict), else -1."""
        out = np.full(len(query), -1, dtype=int)
        if len(query) == 0:
            return out
        cls_arr = np.array([c.value for c in classes], dtype=object)
        for c in PointClass:
            rows = np.flatnonzero(cls_arr == c.value)
            if rows.size == 0 or c not in self._groups:
                continue
            dist, idx = self.distances(c, query[rows])
            best = np.argmin(dist, axis=1)
            hit = dist[np.arange(rows.size), best] < radius
            out[rows[hit]] = idx[best[hit]]
        return out


def build_candidates(
    ego_anchors: Sequence[LabeledPoint],
    coop_anchors: Sequence[LabeledPoint],
    params: MatchParams,
) -> list[MatchCandidate]:
    """Up to ``k_neighbors`` same-class ego anchors within ``epsilon1`` of each coop anchor.

    Coop anchors must already be in the ego frame. Anchors without any
    qualifying neighbor produce no candidate, so an empty result means the
    two views do not overlap.
    """
    if not ego_anchors or not coop_anchors:
        return []
    index = ClassIndex(ego_anchors)
    query = points_xy(coop_anchors)
    out = []
    for bi, b in enumerate(coop_anchors):
        dist, idx = index.distances(b.cls, query[bi : bi + 1])
        dist = dist[0]
        if dist.size == 0:
            continue
        inside = np.flatnonzero(dist < params.epsilon1)
        if inside.size == 0:
            continue
        # stable sort keeps lower index first among equal distances
        order = inside[np.argsort(dist[inside], kind="stable")][: params.k_neighbors]
        nidx = tuple(int(idx[o]) for o in order)
        out.append(
            MatchCandidate(
                b=b,
                neighbors=tuple(ego_anchors[i] for i in nidx),
                b_index=bi,
                neighbor_indices=nidx,
                distances=tuple(float(dist[o]) for o in order),
            )
        )
    return out


def count_consensus(
    ego_all: Sequence[LabeledPoint],
    coop_all_transformed: Sequence[LabeledPoint],
    epsilon2: float,
) -> tuple[int, list[tuple[int, int]]]:
    """Count coop points whose nearest same-class ego point is closer than ``epsilon2``.

    Returns the count and the ``(coop_index, ego_index)`` pairs behind it.
    """
    index = ClassIndex(ego_all)
    nearest = index.nearest_within(
        points_xy(coop_all_transformed), [p.cls for p in coop_all_transformed], epsilon2
    )
    pairs = [(int(b), int(a)) for b, a in enumerate(nearest) if a >= 0]
    return len(pairs), pairs
