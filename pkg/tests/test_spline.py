"""Catmull-Rom evaluation, fitting, sampling, and footpoint checks.

The derived expectations use an independently coded basis-matrix oracle
(pyramid/de-Boor style evaluation) and generate-then-refit round trips.
"""

import numpy as np
import pytest

from ipmmap.errors import (
    PointsNotBeyondExtent,
    SpanTooShort,
    TooFewControlPoints,
)
from ipmmap.spline import (
    LaneElement,
    catmull_rom_eval,
    catmull_rom_tangent,
    catmull_rom_weights,
    extend_lane,
    fit_control_points,
    locate_many,
    locate_segment,
    sample_spline,
)


def pyramid_catmull_rom(p0, p1, p2, p3, t):
    """Independent oracle: uniform Catmull-Rom via the knot-pyramid form.

    Uniform knots t_i = i - 1, evaluated at t in [0, 1] between p1 and p2.
    """
    pts = [np.asarray(p, dtype=float) for p in (p0, p1, p2, p3)]
    knots = [-1.0, 0.0, 1.0, 2.0]
    a = [
        ((knots[i + 1] - t) * pts[i] + (t - knots[i]) * pts[i + 1])
        / (knots[i + 1] - knots[i])
        for i in range(3)
    ]
    b = [
        ((knots[i + 2] - t) * a[i] + (t - knots[i]) * a[i + 1])
        / (knots[i + 2] - knots[i])
        for i in range(2)
    ]
    return ((knots[2] - t) * b[0] + (t - knots[1]) * b[1]) / (knots[2] - knots[1])


def straight_lane(n_interior=6, spacing=3.0, y=0.0):
    interior = np.column_stack(
        [np.arange(n_interior) * spacing, np.full(n_interior, y), np.zeros(n_interior)]
    )
    start = 2 * interior[0] - interior[1]
    end = 2 * interior[-1] - interior[-2]
    return LaneElement(1, np.vstack([start, interior, end]), spacing)


class TestEval:
    def test_collinear_equispaced_is_linear(self):
        window = np.array([[0, 0, 0], [1, 0, 0], [2, 0, 0], [3, 0, 0]], dtype=float)
        np.testing.assert_allclose(
            catmull_rom_eval(window, 0.5), [1.5, 0, 0], atol=1e-15
        )

    def test_interpolates_endpoints(self):
        rng = np.random.default_rng(7)
        for _ in range(20):
            window = rng.uniform(-5, 5, (4, 3))
            np.testing.assert_array_equal(catmull_rom_eval(window, 0.0), window[1])
            np.testing.assert_array_equal(catmull_rom_eval(window, 1.0), window[2])

    def test_against_pyramid_oracle(self):
        window = np.array([[0, 0, 0], [1, 1, 0], [2, 0, 0], [3, 1, 0]], dtype=float)
        for t in [0.0, 0.25, 0.5, 0.75, 1.0]:
            expected = pyramid_catmull_rom(*window, t)
            np.testing.assert_allclose(catmull_rom_eval(window, t), expected, atol=1e-12)

    def test_weights_sum_to_one(self):
        t = np.linspace(0, 1, 17)
        np.testing.assert_allclose(catmull_rom_weights(t).sum(axis=1), 1.0, atol=1e-12)

    def test_c1_at_joins(self):
        rng = np.random.default_rng(8)
        cps = rng.uniform(-3, 3, (7, 3))
        cps[:, 0] = np.arange(7) * 3.0  # keep ordered
        left = catmull_rom_tangent(cps[0:4], 1.0)
        right = catmull_rom_tangent(cps[1:5], 0.0)
        np.testing.assert_allclose(left, right, atol=1e-9)
        # finite-difference check of the analytic tangent at the join
        eps = 1e-7
        fd = (catmull_rom_eval(cps[1:5], eps) - catmull_rom_eval(cps[0:4], 1 - eps)) / (
            2 * eps
        )
        np.testing.assert_allclose(fd, left, atol=1e-5)

    def test_linearity_in_control_points(self):
        rng = np.random.default_rng(9)
        A = rng.uniform(-2, 2, (4, 3))
        B = rng.uniform(-2, 2, (4, 3))
        a, b = 0.7, 1.9
        for t in [0.1, 0.5, 0.9]:
            lhs = catmull_rom_eval(a * A + b * B, t)
            rhs = a * catmull_rom_eval(A, t) + b * catmull_rom_eval(B, t)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)


class TestSampling:
    def test_straight_four_point_lane(self):
        lane = LaneElement(
            0,
            np.array([[-1, 0, 0], [0, 0, 0], [3, 0, 0], [4, 0, 0]], dtype=float),
            nominal_spacing=3.0,
        )
        samples = sample_spline(lane, 1.0)
        assert len(samples) == 4
        np.testing.assert_array_equal(samples[0], [0, 0, 0])
        np.testing.assert_array_equal(samples[-1], [3, 0, 0])

    def test_large_step_gives_two_endpoints(self):
        lane = straight_lane(4)
        samples = sample_spline(lane, 1000.0)
        assert len(samples) == 2
        np.testing.assert_array_equal(samples[0], lane.control_points[1])
        np.testing.assert_array_equal(samples[-1], lane.control_points[-2])

    def test_too_few_control_points(self):
        lane = straight_lane(4)
        lane.control_points = lane.control_points[:3]
        with pytest.raises(TooFewControlPoints):
            sample_spline(lane, 1.0)


class TestFitting:
    def test_exact_line(self):
        x = np.linspace(0.0, 30.0, 101)
        points = np.column_stack([x, np.zeros(101), np.zeros(101)])
        lane = fit_control_points(points, spacing=3.0)
        np.testing.assert_allclose(lane.control_points[:, 1], 0.0, atol=1e-9)
        np.testing.assert_allclose(lane.control_points[:, 2], 0.0, atol=1e-9)
        assert lane.fit_rms < 1e-9

    def test_refit_recovers_control_points(self):
        # Round-trip oracle: sample a known spline, refit, compare. The
        # generator places control points at equal arc steps on a circle so
        # the refit's arc-length knots land on the original positions.
        n, radius, spacing = 9, 50.0, 3.0
        theta = np.arange(n) * spacing / radius
        interior = np.column_stack(
            [radius * np.sin(theta), radius * (1 - np.cos(theta)), np.zeros(n)]
        )
        start = 2 * interior[0] - interior[1]
        end = 2 * interior[-1] - interior[-2]
        lane = LaneElement(0, np.vstack([start, interior, end]), 3.0)
        samples = sample_spline(lane, 0.1)
        refit = fit_control_points(samples, spacing=3.0)
        assert len(refit.control_points) == len(lane.control_points)
        err = np.linalg.norm(
            refit.control_points[1:-1] - lane.control_points[1:-1], axis=1
        )
        assert err.max() < 1e-3

    def test_fit_sample_fit_fixed_point(self):
        x = np.linspace(0.0, 24.0, 200)
        points = np.column_stack([x, 0.3 * np.sin(x / 5.0), np.zeros_like(x)])
        lane1 = fit_control_points(points, spacing=3.0)
        lane2 = fit_control_points(sample_spline(lane1, 0.1), spacing=3.0)
        err = np.linalg.norm(lane1.control_points - lane2.control_points, axis=1)
        assert err.max() < 1e-3

    def test_short_span_rejected(self):
        points = np.array([[0, 0, 0], [0.5, 0, 0], [1.0, 0, 0]], dtype=float)
        with pytest.raises(SpanTooShort):
            fit_control_points(points, spacing=3.0)


class TestLocate:
    def test_query_at_control_point(self):
        lane = straight_lane()
        loc = locate_segment(lane, lane.control_points[2])
        np.testing.assert_allclose(loc.footpoint, lane.control_points[2], atol=1e-6)

    def test_perpendicular_foot(self):
        lane = straight_lane()
        loc = locate_segment(lane, np.array([1.5, 0.5, 0.0]))
        np.testing.assert_allclose(loc.footpoint, [1.5, 0.0, 0.0], atol=1e-4)
        assert np.linalg.norm(loc.footpoint - [1.5, 0.5, 0.0]) == pytest.approx(
            0.5, abs=1e-4
        )

    def test_tie_break_lower_segment(self):
        lane = straight_lane()
        # Exactly at the join of segments 0 and 1: both contain the point.
        loc = locate_segment(lane, lane.control_points[2])
        assert loc.segment_index <= 1

    def test_locate_many_matches_scalar(self):
        lane = straight_lane(8)
        rng = np.random.default_rng(11)
        queries = rng.uniform([0, -1, 0], [18, 1, 0], size=(40, 3))
        segs, ts, feet = locate_many(lane, queries, refine_iters=40)
        for i in range(40):
            loc = locate_segment(lane, queries[i])
            np.testing.assert_allclose(feet[i], loc.footpoint, atol=1e-4)


class TestExtend:
    def test_empty_is_noop(self):
        lane = straight_lane()
        out = extend_lane(lane, np.zeros((0, 3)))
        assert out is lane

    def test_frozen_prefix_and_collinearity(self):
        lane = straight_lane(6)
        end_x = lane.control_points[-2][0]
        new = np.column_stack(
            [end_x + np.arange(1, 8) * 0.5, np.zeros(7), np.zeros(7)]
        )
        out = extend_lane(lane, new)
        n_frozen = len(lane.control_points) - 3
        np.testing.assert_array_equal(
            out.control_points[:n_frozen], lane.control_points[:n_frozen]
        )
        assert len(out.control_points) > len(lane.control_points)
        np.testing.assert_allclose(out.control_points[:, 1], 0.0, atol=1e-6)
        np.testing.assert_allclose(out.control_points[:, 2], 0.0, atol=1e-6)

    def test_arc_tail_curves(self):
        # Curvature oracle: points on a circle must bend the refit tail off
        # the previous tangent line.
        lane = straight_lane(6)
        end = lane.control_points[-2]
        radius = 20.0
        theta = np.linspace(0.0, 0.45, 12)
        new = np.column_stack(
            [
                end[0] + radius * np.sin(theta),
                radius * (1.0 - np.cos(theta)),
                np.zeros_like(theta),
            ]
        )[1:]
        out = extend_lane(lane, new)
        tail_y = out.control_points[-2][1]
        assert abs(tail_y) > 0.05  # clearly off the y = 0 tangent line

    def test_points_behind_rejected(self):
        lane = straight_lane()
        behind = np.array([[1.0, 0.2, 0.0], [2.0, -0.1, 0.0]])
        with pytest.raises(PointsNotBeyondExtent):
            extend_lane(lane, behind)
