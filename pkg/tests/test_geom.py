from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given, strategies as st

from geompnn.geom import (
    Region,
    canonical_rotation,
    classify_region,
    four_axis_angles,
    polar_angle,
    rotate,
    trailing_edge,
    wall_distance_polyline,
)
from geompnn.mesh import MeshCase, recentre

finite = st.floats(-1e3, 1e3, allow_nan=False)


def _surface_case(surf):
    surf = np.asarray(surf, dtype=float)
    n = np.tile([0.0, 1.0], (len(surf), 1))
    return MeshCase(surf, np.arange(len(surf)), n, [1.0, 0.0], np.zeros(len(surf))).validate()


class TestTrailingEdge:
    def test_argmax(self):
        np.testing.assert_array_equal(trailing_edge(_surface_case([[0, 0], [1, 0.05], [0.98, -0.02]])), [1, 0.05])

    def test_unit_chord(self, small_case):
        assert trailing_edge(recentre(small_case))[0] == pytest.approx(1.0, abs=1e-12)

    def test_tie(self):
        np.testing.assert_array_equal(trailing_edge(_surface_case([[0, 0], [1, 0.2], [1, -0.2]])), [1, 0.2])


class TestRegion:
    lead, trail = np.array([0.0, 0.0]), np.array([1.0, 0.0])

    @pytest.mark.parametrize(
        "x, region",
        [((-0.5, 2), Region.Freestream), ((0, 0), Region.OverAirfoil), ((1.2, -3), Region.Downstream), ((1.0, 4), Region.OverAirfoil)],
    )
    def test_examples(self, x, region):
        assert classify_region(np.array(x, dtype=float), self.lead, self.trail) is region

    def test_partition(self):
        pts = np.random.default_rng(0).uniform(-3, 4, size=(10000, 2))
        r = classify_region(pts, self.lead, self.trail)
        counts = [np.count_nonzero(r == k) for k in Region]
        assert sum(counts) == len(pts)
        assert all(c > 0 for c in counts)


class TestAngles:
    def test_axis(self):
        np.testing.assert_allclose(four_axis_angles([1.0, 0.0]), [0, np.pi / 2, np.pi, 3 * np.pi / 2], atol=1e-15)

    def test_diagonal(self):
        assert four_axis_angles([1.0, 1.0])[0] == pytest.approx(np.pi / 4)

    def test_negative_y(self):
        assert four_axis_angles([0.0, -1.0])[0] == pytest.approx(3 * np.pi / 2)

    def test_origin(self):
        np.testing.assert_array_equal(four_axis_angles([0.0, 0.0]), np.zeros(4))
        np.testing.assert_array_equal(four_axis_angles(np.zeros((3, 2))), np.zeros((3, 4)))

    def test_range(self):
        pts = np.random.default_rng(1).normal(size=(5000, 2))
        pts[:10, 1] = 0.0
        pts[10:20, 1] = -0.0
        a = four_axis_angles(pts)
        assert np.all(a >= 0) and np.all(a < 2 * np.pi)

    @given(finite, finite)
    def test_cartesian_consistency(self, x, y):
        r = np.hypot(x, y)
        if r == 0:
            return
        t = polar_angle(x, y)
        np.testing.assert_allclose([r * np.cos(t), r * np.sin(t)], [x, y], atol=1e-10 * max(1.0, r))

    @given(finite, finite)
    def test_quarter_turn_spacing(self, x, y):
        if x == 0 and y == 0:
            return
        a = four_axis_angles([x, y])
        diffs = np.mod(np.diff(np.append(a, a[0])), 2 * np.pi)
        err = np.minimum(np.abs(diffs - np.pi / 2), np.abs(diffs - np.pi / 2 - 2 * np.pi))
        assert np.all(err < 1e-12)


class TestRotation:
    def test_identity(self):
        np.testing.assert_array_equal(canonical_rotation([1.0, 0.0]), np.eye(2))

    @pytest.mark.parametrize("v, out", [((0, 2), (2, 0)), ((3, 4), (5, 0))])
    def test_examples(self, v, out):
        np.testing.assert_allclose(canonical_rotation(v) @ np.array(v, dtype=float), out, atol=1e-12)

    def test_null(self):
        with pytest.raises(ValueError, match="cannot canonicalize null velocity"):
            canonical_rotation([0.0, 0.0])

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3), finite, finite)
    def test_isometry_and_orthogonality(self, v1, v2, x, y):
        if np.hypot(v1, v2) < 1e-6:
            return
        R = canonical_rotation([v1, v2])
        np.testing.assert_allclose(R.T @ R, np.eye(2), atol=1e-12)
        assert np.linalg.det(R) == pytest.approx(1.0, abs=1e-12)
        assert np.hypot(*rotate(R, [x, y])) == pytest.approx(np.hypot(x, y), abs=1e-12 * max(1.0, np.hypot(x, y)))

    def test_rotate_matches_matmul(self):
        R = canonical_rotation([0.3, -2.0])
        pts = np.random.default_rng(2).normal(size=(50, 2))
        np.testing.assert_allclose(rotate(R, pts), pts @ R.T, atol=1e-15)


class TestWallDistance:
    def test_vertex(self):
        assert wall_distance_polyline([1.0, 0.0], [[0, 0], [1, 0], [1, 1]]) == 0.0

    def test_perpendicular(self):
        assert wall_distance_polyline([0.5, 1.0], [[0, 0], [1, 0]]) == pytest.approx(1.0)

    def test_dense_oracle(self):
        rng = np.random.default_rng(3)
        poly = rng.uniform(-1, 1, size=(6, 2))
        t = np.linspace(0, 1, 20001)[:, None]
        dense = np.concatenate([a + t * (b - a) for a, b in zip(poly[:-1], poly[1:])])
        pts = rng.uniform(-2, 2, size=(30, 2))
        d = wall_distance_polyline(pts, poly)
        brute = np.array([np.min(np.hypot(*(dense - p).T)) for p in pts])
        np.testing.assert_allclose(d, brute, atol=1e-6)
        assert np.all(d <= brute + 1e-15)

    def test_needs_two_vertices(self):
        with pytest.raises(ValueError):
            wall_distance_polyline([0, 0], [[1, 1]])
