import math

import numpy as np
import pytest

from cavloc.geometry import Transform2D, inverse
from cavloc.keypoints import KeypointSet, LabeledPoint, PointClass


def random_transform(rng, max_xy=50.0, max_theta=math.pi):
    return Transform2D(rng.uniform(-max_theta, max_theta), *rng.uniform(-max_xy, max_xy, size=2))


def make_scene(
    rng,
    n_shared,
    correction,
    n_ego_only=3,
    n_coop_only=3,
    n_planar=0,
    noise=0.0,
    half_extent=30.0,
):
    """Ego set plus a coop set already in the (erroneous) ego frame.

    Coop points are the true ego-frame points moved by ``inverse(correction)``,
    so ``correction`` is exactly what a perfect estimator returns.
    """
    classes = [PointClass.VEHICLE_CENTER, PointClass.POLE]

    def anchors(n, tag):
        xy = rng.uniform(-half_extent, half_extent, size=(n, 2))
        cls = [classes[i % 2] for i in range(n)]
        return [(x, y, c, f"{tag}:{i}") for i, ((x, y), c) in enumerate(zip(xy, cls))]

    shared = anchors(n_shared, "shared")
    planar = [
        (x, 12.0, PointClass.PLANAR, f"facade:{k}")
        for k, x in enumerate(np.linspace(-half_extent, half_extent, n_planar))
    ]
    ego_pts = shared + anchors(n_ego_only, "ego") + planar
    coop_pts = shared + anchors(n_coop_only, "coop") + planar
    to_coop = inverse(correction)

    def build(pts, t):
        xy = np.array([(p[0], p[1]) for p in pts]).reshape(-1, 2)
        if t is not None:
            xy = t.apply(xy)
        xy = xy + rng.normal(0.0, noise, size=xy.shape) if noise else xy
        return tuple(LabeledPoint(float(x), float(y), p[2], p[3]) for (x, y), p in zip(xy, pts))

    ego = KeypointSet("f", "ego", build(ego_pts, None), "local")
    coop = KeypointSet("f", "coop", build(coop_pts, to_coop), "ego")
    return ego, coop


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        terminalreporter.write_line(results[n])
