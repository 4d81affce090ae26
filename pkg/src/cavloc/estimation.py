"""Relative-pose correction between an ego and a cooperative keypoint set.

``ransac_correct`` hypothesizes a rigid transform from two anchor matches,
scores it by class-constrained nearest-neighbor consensus over all points and
refines the best hypothesis from every consensus anchor pair.
``grid_search_correct`` scores an exhaustive (theta, x, y) grid instead and is
meant as a slow reference.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np

from .geometry import Transform2D
from .keypoints import KeypointSet, LabeledPoint, PointClass, points_xy
from .matching import ClassIndex, MatchCandidate, MatchParams, build_candidates

_COINCIDENT_TOL = 1e-12


class DegenerateGeometryError(ValueError):
    """Point pairs do not determine a rigid transform."""


class GridBudgetError(ValueError):
    """The requested search grid has more cells than allowed."""


def cal_tf(pairs: Sequence[tuple[Sequence[float], Sequence[float]]]) -> Transform2D:
    """Least-squares rigid transform mapping each ``a`` onto its ``b``.

    ``pairs`` is a sequence of ``(a, b)`` 2D points. The rotation comes from
    the cross-covariance of the centered sets, the translation aligns the
    centroids.
    """
    if len(pairs) < 2:
        raise DegenerateGeometryError(f"need at least 2 point pairs, got {len(pairs)}")
    arr = np.asarray(pairs, dtype=float)
    if arr.shape[1:] != (2, 2):
        raise ValueError(f"pairs must have shape (N, 2, 2), got {arr.shape}")
    a, b = arr[:, 0, :], arr[:, 1, :]
    a_mean, b_mean = a.mean(axis=0), b.mean(axis=0)
    a_red, b_red = a - a_mean, b - b_mean
    scale = max(1.0, float(np.abs(a).max()))
    if np.abs(a_red).max() <= _COINCIDENT_TOL * scale:
        raise DegenerateGeometryError("all source points coincide")
    s_xx = float(np.dot(a_red[:, 0], b_red[:, 0]))
    s_yy = float(np.dot(a_red[:, 1], b_red[:, 1]))
    s_xy = float(np.dot(a_red[:, 0], b_red[:, 1]))
    s_yx = float(np.dot(a_red[:, 1], b_red[:, 0]))
    dtheta = math.atan2(s_xy - s_yx, s_xx + s_yy)
    c, s = math.cos(dtheta), math.sin(dtheta)
    dx = b_mean[0] - (c * a_mean[0] - s * a_mean[1])
    dy = b_mean[1] - (s * a_mean[0] + c * a_mean[1])
    return Transform2D(dtheta, dx, dy)


@dataclass(frozen=True)
class RansacParams:
    n_ransac: int = 30
    match: MatchParams = field(default_factory=MatchParams.from_noise)
    rng_seed: int = 0
    # enumerate every two-match hypothesis instead of sampling
    exhaustive: bool = False

    def __post_init__(self) -> None:
        if self.n_ransac < 1:
            raise ValueError("n_ransac must be >= 1")


@dataclass(frozen=True)
class CorrectionResult:
    """Outcome of one correction.

    ``correspondences`` holds ``(coop, ego)`` anchor pairs, the coop point in
    the coordinates it was passed in (i.e. before ``transform`` is applied).
    """

    transform: Transform2D
    n_cons: int
    correspondences: tuple[tuple[LabeledPoint, LabeledPoint], ...] = ()
    iterations_run: int = 0

    def valid_for(self, thr_cons: int) -> bool:
        return self.n_cons > thr_cons


_EMPTY = CorrectionResult(Transform2D.identity(), 0, (), 0)


class _Scene:
    """Array views of both keypoint sets, built once per correction."""

    def __init__(self, ego_set: KeypointSet, coop_set: KeypointSet):
        self.ego_anchors = ego_set.anchors()
        self.coop_anchors = coop_set.anchors()
        ego_all = self.ego_anchors + ego_set.planar()
        coop_all = self.coop_anchors + coop_set.planar()
        self.n_coop_anchors = len(self.coop_anchors)
        self.ego_index = ClassIndex(ego_all)
        self.coop_xy = points_xy(coop_all)
        self.coop_cls = [p.cls for p in coop_all]
        self.coop_anchor_xy = self.coop_xy[: self.n_coop_anchors]
        self.ego_anchor_xy = points_xy(self.ego_anchors)

    def consensus(self, t: Transform2D, epsilon2: float) -> tuple[int, np.ndarray]:
        moved = t.apply(self.coop_xy) if len(self.coop_xy) else self.coop_xy
        nearest = self.ego_index.nearest_within(moved, self.coop_cls, epsilon2)
        return int(np.count_nonzero(nearest >= 0)), nearest

    def anchor_pairs(self, nearest: np.ndarray) -> list[int]:
        # ego anchors come first in ego_all, so indices below len(anchors) are anchors
        return [k for k in range(self.n_coop_anchors) if nearest[k] >= 0]

    def refine(self, nearest: np.ndarray) -> tuple[Transform2D, tuple]:
        ks = self.anchor_pairs(nearest)
        corr = tuple((self.coop_anchors[k], self.ego_anchors[int(nearest[k])]) for k in ks)
        if len(ks) < 2:
            return Transform2D.identity(), corr
        pairs = [(self.coop_anchor_xy[k], self.ego_anchor_xy[int(nearest[k])]) for k in ks]
        try:
            return cal_tf(pairs), corr
        except DegenerateGeometryError:
            return Transform2D.identity(), corr


def _sampled_hypotheses(
    cands: list[MatchCandidate], rng: np.random.Generator, max_draws: int
) -> Iterator[tuple[int, int, int, int]]:
    for _ in range(max_draws):
        i1, i2 = rng.choice(len(cands), size=2, replace=False)
        n1 = rng.integers(len(cands[i1].neighbors))
        n2 = rng.integers(len(cands[i2].neighbors))
        yield int(i1), int(i2), int(n1), int(n2)


def _all_hypotheses(cands: list[MatchCandidate]) -> Iterator[tuple[int, int, int, int]]:
    for i1, i2 in itertools.combinations(range(len(cands)), 2):
        for n1 in range(len(cands[i1].neighbors)):
            for n2 in range(len(cands[i2].neighbors)):
                yield i1, i2, n1, n2


def ransac_correct(
    ego_set: KeypointSet, coop_set_in_ego: KeypointSet, params: RansacParams
) -> CorrectionResult:
    """Estimate the correction mapping ``coop_set_in_ego`` onto ``ego_set``.

    ``coop_set_in_ego`` must already be moved into the ego frame with the
    GNSS-derived relative transform. Iterations are capped at
    ``min(n_ransac, C(|M'|, 2))`` where ``|M'|`` is the total number of
    candidate matches. Draws whose two matches share a source or target
    point are skipped and not counted.
    """
    scene = _Scene(ego_set, coop_set_in_ego)
    eps2 = params.match.epsilon2
    cands = build_candidates(scene.ego_anchors, scene.coop_anchors, params.match)
    if len(cands) < 2:
        return _EMPTY

    n_flat = sum(len(c.neighbors) for c in cands)
    if params.exhaustive:
        n_iter = math.inf
        hypotheses = _all_hypotheses(cands)
    else:
        n_iter = min(params.n_ransac, math.comb(n_flat, 2))
        rng = np.random.default_rng(params.rng_seed)
        hypotheses = _sampled_hypotheses(cands, rng, max_draws=20 * n_iter + 100)

    best_cons = 0
    best_t = Transform2D.identity()
    best_corr: tuple = ()
    iterations = 0
    trace: list[int] = []
    for i1, i2, n1, n2 in hypotheses:
        if iterations >= n_iter:
            break
        c1, c2 = cands[i1], cands[i2]
        b1, b2 = c1.b.xy, c2.b.xy
        a1, a2 = c1.neighbors[n1].xy, c2.neighbors[n2].xy
        if _same(b1, b2) or _same(a1, a2):
            continue
        iterations += 1
        t = cal_tf([(b1, a1), (b2, a2)])
        n_cons, nearest = scene.consensus(t, eps2)
        if n_cons > best_cons:
            best_cons = n_cons
            best_t, best_corr = scene.refine(nearest)
        trace.append(best_cons)
    assert all(p <= q for p, q in zip(trace, trace[1:])), "best consensus decreased"

    return CorrectionResult(best_t, best_cons, best_corr, iterations)


def _same(p: tuple[float, float], q: tuple[float, float]) -> bool:
    return math.hypot(p[0] - q[0], p[1] - q[1]) <= _COINCIDENT_TOL * max(
        1.0, abs(p[0]), abs(p[1])
    )


def _axis(center: float, span: float, res: float) -> np.ndarray:
    if res <= 0:
        raise ValueError("grid resolution must be positive")
    if span < 0:
        raise ValueError("grid span must be non-negative")
    k = math.floor(span / res + 1e-9)
    return center + np.arange(-k, k + 1) * res


def grid_size(x_span: float, y_span: float, theta_span: float, resolutions: tuple[float, float]) -> int:
    xy_res, theta_res = resolutions
    return (
        len(_axis(0.0, x_span, xy_res))
        * len(_axis(0.0, y_span, xy_res))
        * len(_axis(0.0, theta_span, theta_res))
    )


def grid_search_correct(
    ego_set: KeypointSet,
    coop_set_in_ego: KeypointSet,
    x_span: float,
    y_span: float,
    theta_span: float,
    resolutions: tuple[float, float] = (0.1, 0.5),
    epsilon2: float = 1.0,
    center: Transform2D | None = None,
    max_cells: int = 1_000_000,
) -> CorrectionResult:
    """Exhaustive maximum-consensus search over a regular (theta, x, y) grid.

    Spans are half-widths around ``center`` (identity by default):
    ``x_span``/``y_span`` in meters, ``theta_span`` in degrees.
    ``resolutions`` is ``(xy_res_m, theta_res_deg)``. Consensus ties go to
    the cell with the smallest ``dx^2 + dy^2 + dtheta_rad^2``, then to the
    lexicographically smallest ``(dtheta, dx, dy)``.
    """
    center = center or Transform2D.identity()
    xy_res, theta_res = resolutions
    xs = _axis(center.dx, x_span, xy_res)
    ys = _axis(center.dy, y_span, xy_res)
    thetas = np.radians(_axis(center.dtheta_deg, theta_span, theta_res))
    n_cells = len(xs) * len(ys) * len(thetas)
    if n_cells > max_cells:
        raise GridBudgetError(f"grid has {n_cells} cells, budget is {max_cells}")

    scene = _Scene(ego_set, coop_set_in_ego)
    counts = np.zeros((len(thetas), len(xs), len(ys)), dtype=int)
    eps_sq = epsilon2 * epsilon2
    by_class = {c: np.flatnonzero([k is c for k in scene.coop_cls]) for c in PointClass}
    for ti, theta in enumerate(thetas):
        rotated = Transform2D(theta, 0.0, 0.0).apply(scene.coop_xy)
        for c, rows in by_class.items():
            ego_xy = scene.ego_index.class_xy(c)
            if rows.size == 0 or len(ego_xy) == 0:
                continue
            # shift that would put each coop point exactly on each ego point
            need = ego_xy[None, :, :] - rotated[rows][:, None, :]
            for xi, x in enumerate(xs):
                ddx = x - need[None, :, :, 0]
                ddy = ys[:, None, None] - need[None, :, :, 1]
                hit = (ddx * ddx + ddy * ddy < eps_sq).any(axis=2)
                counts[ti, xi] += hit.sum(axis=1)

    best = int(counts.max()) if counts.size else 0
    winners = np.argwhere(counts == best)

    def key(cell: np.ndarray) -> tuple[float, float, float, float]:
        th, dx, dy = thetas[cell[0]], xs[cell[1]], ys[cell[2]]
        return (dx * dx + dy * dy + th * th, th, dx, dy)

    ti, xi, yi = min(winners, key=key)
    t = Transform2D(float(thetas[ti]), float(xs[xi]), float(ys[yi]))
    n_cons, nearest = scene.consensus(t, epsilon2)
    ks = scene.anchor_pairs(nearest)
    corr = tuple((scene.coop_anchors[k], scene.ego_anchors[int(nearest[k])]) for k in ks)
    return CorrectionResult(t, n_cons, corr, n_cells)

