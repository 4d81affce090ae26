import math

import numpy as np
import pytest

from cavloc.keypoints import LabeledPoint, PointClass
from cavloc.matching import (
    MatchParams,
    build_candidates,
    count_consensus,
    epsilon1_from_noise,
)

VC, POLE, PLANAR = PointClass.VEHICLE_CENTER, PointClass.POLE, PointClass.PLANAR


def P(x, y, c=POLE, sid=None):
    return LabeledPoint(float(x), float(y), c, sid)


def brute_candidates(ego, coop, eps1, k=2):
    out = []
    for bi, b in enumerate(coop):
        near = [
            (math.sqrt((b.x - a.x) ** 2 + (b.y - a.y) ** 2), ai)
            for ai, a in enumerate(ego)
            if a.cls is b.cls
        ]
        near = sorted((d, ai) for d, ai in near if d < eps1)[:k]
        if near:
            out.append((bi, tuple(ai for _, ai in near)))
    return out


def brute_consensus(ego, coop, eps2):
    pairs = []
    for bi, b in enumerate(coop):
        best = None
        for ai, a in enumerate(ego):
            if a.cls is not b.cls:
                continue
            d = math.sqrt((b.x - a.x) * (b.x - a.x) + (b.y - a.y) * (b.y - a.y))
            if best is None or d < best[0]:
                best = (d, ai)
        if best is not None and best[0] < eps2:
            pairs.append((bi, best[1]))
    return len(pairs), pairs


def random_points(rng, n, extent=100.0, classes=(VC, POLE, PLANAR)):
    xy = rng.uniform(-extent, extent, size=(n, 2))
    cls = rng.integers(len(classes), size=n)
    return [P(x, y, classes[c]) for (x, y), c in zip(xy, cls)]


class TestEpsilon1:
    def test_reference_constants(self):
        # 2.58 * 40 * 4 * pi / 180
        assert epsilon1_from_noise(2.58, 40, 4) == pytest.approx(7.205, abs=1e-3)

    def test_units_cancel(self):
        assert epsilon1_from_noise(1, 180 / math.pi, 1) == pytest.approx(1.0, abs=1e-15)

    def test_linear_in_sigma(self):
        assert epsilon1_from_noise(2.58, 40, 2) == pytest.approx(epsilon1_from_noise(2.58, 40, 4) / 2, rel=1e-15)

    def test_rejects_non_positive(self):
        with pytest.raises(ValueError):
            epsilon1_from_noise(2.58, 40, 0)

    def test_params_from_noise(self):
        p = MatchParams.from_noise()
        assert p.epsilon1 == pytest.approx(7.205, abs=1e-3)
        assert (p.epsilon2, p.eta, p.k_neighbors) == (1.0, 2.58, 2)


class TestCandidates:
    def test_single_neighbor(self):
        cands = build_candidates([P(0, 0)], [P(0.5, 0)], MatchParams(7.2))
        assert len(cands) == 1 and cands[0].neighbor_indices == (0,)

    def test_class_mismatch(self):
        assert build_candidates([P(0, 0)], [P(0.5, 0, VC)], MatchParams(7.2)) == []

    def test_two_nearest_within_radius(self):
        ego = [P(0, 0), P(1, 0), P(3, 0)]
        cands = build_candidates(ego, [P(0.4, 0)], MatchParams(2.0))
        assert [n.xy for n in cands[0].neighbors] == [(0.0, 0.0), (1.0, 0.0)]
        assert brute_candidates(ego, [P(0.4, 0)], 2.0) == [(0, (0, 1))]

    def test_tie_goes_to_lower_index(self):
        ego = [P(1, 0), P(-1, 0), P(0, 1)]
        cands = build_candidates(ego, [P(0, 0)], MatchParams(5.0, k_neighbors=2))
        assert cands[0].neighbor_indices == (0, 1)

    def test_empty_inputs(self):
        assert build_candidates([], [P(0, 0)], MatchParams(1.0)) == []
        assert build_candidates([P(0, 0)], [], MatchParams(1.0)) == []

    def test_randomized_against_brute_force(self, rng):
        for _ in range(100):
            ego = random_points(rng, int(rng.integers(1, 60)), 30.0, (VC, POLE))
            coop = random_points(rng, int(rng.integers(1, 60)), 30.0, (VC, POLE))
            eps1 = float(rng.uniform(0.5, 10))
            cands = build_candidates(ego, coop, MatchParams(eps1))
            assert [(c.b_index, c.neighbor_indices) for c in cands] == brute_candidates(ego, coop, eps1)
            for c in cands:
                assert 1 <= len(c.neighbors) <= 2
                assert all(n.cls is c.b.cls for n in c.neighbors)
                assert all(d < eps1 for d in c.distances)
                assert list(c.distances) == sorted(c.distances)


class TestConsensus:
    def test_identical_sets(self, rng):
        pts = random_points(rng, 40)
        n, pairs = count_consensus(pts, pts, 1.0)
        assert n == 40 and pairs == [(i, i) for i in range(40)]

    def test_far_apart(self, rng):
        ego = random_points(rng, 20)
        coop = [P(p.x + 1000, p.y, p.cls) for p in ego]
        assert count_consensus(ego, coop, 1.0) == (0, [])

    def test_mixed_classes(self):
        ego = [P(0, 0, POLE), P(5, 5, PLANAR)]
        coop = [P(0.3, 0, POLE), P(5.2, 5, PLANAR), P(9, 9, PLANAR)]
        n, pairs = count_consensus(ego, coop, 1.0)
        assert n == 2 and pairs == [(0, 0), (1, 1)]
        assert (n, pairs) == brute_consensus(ego, coop, 1.0)

    def test_class_constrained(self):
        assert count_consensus([P(0, 0, VC)], [P(0, 0, POLE)], 1.0)[0] == 0

    def test_strict_threshold(self):
        assert count_consensus([P(0, 0)], [P(1.0, 0)], 1.0)[0] == 0
        assert count_consensus([P(0, 0)], [P(0.999, 0)], 1.0)[0] == 1

    def test_symmetric_for_equal_sets(self, rng):
        pts = random_points(rng, 50)
        assert count_consensus(pts, pts, 0.5)[0] == count_consensus(list(reversed(pts)), pts, 0.5)[0]

    def test_randomized_against_brute_force(self, rng):
        for trial in range(100):
            n = 1000 if trial % 10 == 0 else int(rng.integers(1, 300))
            ego = random_points(rng, n, 50.0)
            coop = random_points(rng, int(rng.integers(1, n + 1)), 50.0)
            eps2 = float(rng.uniform(0.2, 3.0))
            assert count_consensus(ego, coop, eps2) == brute_consensus(ego, coop, eps2)
