"""Planar poses, rigid transforms and global-to-local error propagation.

Angles are radians internally. Degree conversion happens at the edges
(CLI, reports, noise parameters).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

TWO_PI = 2.0 * math.pi
_ORTHO_TOL = 1e-12


def wrap_angle(angle: float) -> float:
    """Wrap an angle in radians to (-pi, pi]."""
    wrapped = math.remainder(angle, TWO_PI)
    if wrapped <= -math.pi:
        return math.pi
    return wrapped


def wrap_degrees(angle: float) -> float:
    """Wrap an angle in degrees to (-180, 180]."""
    wrapped = math.remainder(angle, 360.0)
    if wrapped <= -180.0:
        return 180.0
    return wrapped


@dataclass(frozen=True)
class Pose2D:
    """Vehicle pose in a global frame; heading measured from the global x-axis."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError(f"non-finite pose {self.x}, {self.y}, {self.theta}")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_degrees(cls, x: float, y: float, heading_deg: float) -> "Pose2D":
        return cls(float(x), float(y), math.radians(heading_deg))

    @property
    def heading_deg(self) -> float:
        return math.degrees(self.theta)

    @property
    def position(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PoseNoise:
    """Gaussian localization noise: sigma_xy in meters per axis, sigma_r in degrees."""

    sigma_xy: float = 0.0
    sigma_r: float = 0.0

    def __post_init__(self) -> None:
        if self.sigma_xy < 0 or self.sigma_r < 0:
            raise ValueError("noise standard deviations must be non-negative")


@dataclass(frozen=True)
class Transform2D:
    """Rigid planar transform ``p -> R(dtheta) p + (dx, dy)``."""

    dtheta: float = 0.0
    dx: float = 0.0
    dy: float = 0.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "dtheta", wrap_angle(float(self.dtheta)))
        object.__setattr__(self, "dx", float(self.dx))
        object.__setattr__(self, "dy", float(self.dy))

    @classmethod
    def identity(cls) -> "Transform2D":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_degrees(cls, dtheta_deg: float, dx: float, dy: float) -> "Transform2D":
        return cls(math.radians(dtheta_deg), dx, dy)

    @classmethod
    def from_matrix(cls, matrix: np.ndarray) -> "Transform2D":
        """Build from a 3x3 homogeneous matrix; the rotation block must be proper."""
        m = np.asarray(matrix, dtype=float)
        if m.shape != (3, 3):
            raise ValueError(f"expected a 3x3 matrix, got shape {m.shape}")
        rot = m[:2, :2]
        if not np.allclose(rot.T @ rot, np.eye(2), rtol=0.0, atol=_ORTHO_TOL):
            raise ValueError("rotation block is not orthonormal")
        if abs(np.linalg.det(rot) - 1.0) > _ORTHO_TOL:
            raise ValueError("rotation block has determinant != +1")
        if not np.allclose(m[2], [0.0, 0.0, 1.0], rtol=0.0, atol=_ORTHO_TOL):
            raise ValueError("last row must be [0, 0, 1]")
        return cls(math.atan2(m[1, 0], m[0, 0]), m[0, 2], m[1, 2])

    @property
    def dtheta_deg(self) -> float:
        return math.degrees(self.dtheta)

    @property
    def translation(self) -> np.ndarray:
        return np.array([self.dx, self.dy])

    @property
    def rotation(self) -> np.ndarray:
        c, s = math.cos(self.dtheta), math.sin(self.dtheta)
        return np.array([[c, -s], [s, c]])

    @property
    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.dtheta), math.sin(self.dtheta)
        return np.array([[c, -s, self.dx], [s, c, self.dy], [0.0, 0.0, 1.0]])

    def params(self) -> tuple[float, float, float]:
        return (self.dtheta, self.dx, self.dy)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform an (N, 2) array (or a single 2-vector) of points."""
        pts = np.asarray(points, dtype=float)
        return pts @ self.rotation.T + self.translation

    def inverse(self) -> "Transform2D":
        return inverse(self)

    def __matmul__(self, other: "Transform2D") -> "Transform2D":
        return compose(self, other)


def make_translation(m: float, n: float) -> Transform2D:
    """Pure translation by (m, n)."""
    return Transform2D(0.0, m, n)


def make_rotation(angle: float) -> Transform2D:
    """Pure rotation about the origin by ``angle`` radians."""
    return Transform2D(angle, 0.0, 0.0)


def compose(a: Transform2D, b: Transform2D) -> Transform2D:
    """Matrix product ``a @ b``: apply ``b`` first, then ``a``."""
    c, s = math.cos(a.dtheta), math.sin(a.dtheta)
    return Transform2D(
        a.dtheta + b.dtheta,
        a.dx + c * b.dx - s * b.dy,
        a.dy + s * b.dx + c * b.dy,
    )


def inverse(t: Transform2D) -> Transform2D:
    c, s = math.cos(t.dtheta), math.sin(t.dtheta)
    return Transform2D(-t.dtheta, -(c * t.dx + s * t.dy), -(-s * t.dx + c * t.dy))


def apply(t: Transform2D, p: Iterable[float]) -> tuple[float, float]:
    """Apply ``t`` to a single point using homogeneous coordinates."""
    x, y = p
    h = t.matrix @ np.array([x, y, 1.0])
    return (float(h[0]), float(h[1]))


def chain(*transforms: Transform2D) -> Transform2D:
    """Left-to-right matrix product of any number of transforms."""
    out = Transform2D.identity()
    for t in transforms:
        out = compose(out, t)
    return out


def erroneous_relative_transform(ego: Pose2D, coop: Pose2D) -> Transform2D:
    """Transform taking coop-local coordinates into the ego frame.

    Equals ``R(-theta_ego) S(-x_ego, -y_ego) S(x_coop, y_coop) R(theta_coop)``;
    feed it erroneous poses to get the GNSS-style estimate, true poses for the
    true relative transform.
    """
    return chain(
        make_rotation(-ego.theta),
        make_translation(-ego.x, -ego.y),
        make_translation(coop.x, coop.y),
        make_rotation(coop.theta),
    )


def ground_truth_correction(
    true_ego: Pose2D, true_coop: Pose2D, err_ego: Pose2D, err_coop: Pose2D
) -> Transform2D:
    """Correction ``dT`` with ``dT @ T(err_ego, err_coop) == T(true_ego, true_coop)``."""
    t_true = erroneous_relative_transform(true_ego, true_coop)
    t_err = erroneous_relative_transform(err_ego, err_coop)
    return compose(t_true, inverse(t_err))


@dataclass(frozen=True)
class Envelope:
    distance: float
    dx_min: float
    dx_max: float
    dy_min: float
    dy_max: float
    dtheta: float

    @property
    def dtheta_deg(self) -> float:
        return math.degrees(self.dtheta)


def relative_error_envelope(
    err_ego: tuple[float, float, float],
    err_coop: tuple[float, float, float],
    distance: float,
    n_orientations: int = 72,
) -> Envelope:
    """Extremes of the correction translation for two vehicles ``distance`` apart.

    Error triples are (dx m, dy m, dtheta deg) added to the true poses. The ego
    sits at the origin; its heading and the bearing of the cooperative vehicle
    each sweep ``n_orientations`` equally spaced angles over [0, 2*pi). The
    cooperative vehicle's heading is irrelevant to the translation and is held
    at zero.
    """
    if n_orientations < 4:
        raise ValueError("n_orientations must be >= 4")
    if distance < 0:
        raise ValueError("distance must be non-negative")
    e0x, e0y, e0r = err_ego
    eix, eiy, eir = err_coop
    angles = np.arange(n_orientations) * (TWO_PI / n_orientations)
    dxs, dys = [], []
    dtheta = None
    for heading in angles:
        ego = Pose2D(0.0, 0.0, heading)
        ego_err = Pose2D(e0x, e0y, heading + math.radians(e0r))
        for bearing in angles:
            cx, cy = distance * math.cos(bearing), distance * math.sin(bearing)
            coop = Pose2D(cx, cy, 0.0)
            coop_err = Pose2D(cx + eix, cy + eiy, math.radians(eir))
            dt = ground_truth_correction(ego, coop, ego_err, coop_err)
            dxs.append(dt.dx)
            dys.append(dt.dy)
            dtheta = dt.dtheta
    return Envelope(
        distance=float(distance),
        dx_min=min(dxs),
        dx_max=max(dxs),
        dy_min=min(dys),
        dy_max=max(dys),
        dtheta=float(dtheta),
    )


def search_space_cells(
    x_span: float, y_span: float, theta_span: float, xy_res: float, theta_res: float
) -> int:
    """Number of cells a brute-force search over (x, y, theta) has to score.

    ``theta_span`` and ``theta_res`` are degrees.
    """
    if xy_res <= 0 or theta_res <= 0:
        raise ValueError("resolutions must be positive")
    if x_span <= 0 or y_span <= 0 or theta_span <= 0:
        raise ValueError("spans must be positive")

    def cells(span: float, res: float) -> int:
        # 12 / 0.1 is 119.99999999999999 in floating point
        return math.floor(span / res + 1e-9)

    return cells(x_span, xy_res) * cells(y_span, xy_res) * cells(theta_span, theta_res)
