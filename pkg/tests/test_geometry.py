"""Projection, back-projection, homography, and SE(3) checks.

Derived expectations are computed with independent oracles coded here
(ray-plane intersection by hand, finite differences) rather than by
calling the functions under test.
"""

import math

import numpy as np
import pytest

from ipmmap.errors import AngleNearPi, NonPositiveDepth, RayParallelToGround
from ipmmap.geometry import (
    NOMINAL_CAM_TO_BODY,
    CameraIntrinsics,
    RigidTransform,
    compose_homography,
    extrinsic_pitch,
    initial_extrinsic_guess,
    ipm_backproject,
    ipm_backproject_body,
    ipm_backproject_points,
    perturb_extrinsic,
    project,
    project_points,
    rot_x,
    rot_z,
    se3_exp,
    se3_log,
    se3_right_jacobian_inv,
    world_to_camera,
)

from conftest import pose_at


def horizon_row(extr, intr):
    """Image row of the horizon: where the ray's body z component is zero."""
    # Scan rows at the principal column; the transition row brackets it.
    for v in range(intr.height):
        d_cam = np.array([0.0, (v - intr.cy) / intr.fy, 1.0])
        d_body = extr.rotation @ d_cam
        if d_body[2] < 0:
            return v
    return intr.height


class TestProjection:
    def test_principal_axis_point(self, intr, identity_pose):
        # Camera-frame (0, 0, 5) must land on the principal point. Build a
        # world point that maps to that camera point under the extrinsic.
        extr = initial_extrinsic_guess(1.5, 0.0, 0.3)
        p_world = extr.rotation @ np.array([0.0, 0.0, 5.0]) + extr.translation
        intr500 = CameraIntrinsics(500.0, 500.0, 640.0, 360.0, 1280, 720)
        px = project(p_world, identity_pose, extr, intr500)
        np.testing.assert_allclose(px, [640.0, 360.0], atol=1e-9)

    def test_offset_point_hand_computed(self, identity_pose):
        # Camera-frame (1, 0, 5) with fx=500: u = 500*1/5 + 640 = 740.
        extr = initial_extrinsic_guess(1.5, 0.0, 0.3)
        p_world = extr.rotation @ np.array([1.0, 0.0, 5.0]) + extr.translation
        intr500 = CameraIntrinsics(500.0, 500.0, 640.0, 360.0, 1280, 720)
        px = project(p_world, identity_pose, extr, intr500)
        expected_u = 500.0 * 1.0 / 5.0 + 640.0
        assert expected_u == 740.0
        np.testing.assert_allclose(px, [740.0, 360.0], atol=1e-9)

    def test_behind_camera_raises(self, intr, extr, identity_pose):
        behind = extr.rotation @ np.array([0.0, 0.0, -2.0]) + extr.translation
        with pytest.raises(NonPositiveDepth):
            project(behind, identity_pose, extr, intr)

    def test_vectorized_matches_scalar(self, intr, extr, identity_pose):
        rng = np.random.default_rng(0)
        pts = rng.uniform([2, -5, 0], [30, 5, 0], size=(50, 3))
        px, valid = project_points(pts, identity_pose, extr, intr)
        assert valid.all()
        for i in range(50):
            np.testing.assert_allclose(
                px[i], project(pts[i], identity_pose, extr, intr), atol=1e-12
            )


class TestIpmBackprojection:
    def test_pitch45_principal_point(self, identity_pose):
        # Independent oracle: horizontal range = h / tan(pitch).
        intr = CameraIntrinsics(700.0, 700.0, 640.0, 360.0, 1280, 720)
        extr = initial_extrinsic_guess(1.0, 0.0, np.deg2rad(45.0))
        p = ipm_backproject(np.array([640.0, 360.0]), identity_pose, extr, intr)
        expected_range = 1.0 / math.tan(np.deg2rad(45.0))
        np.testing.assert_allclose(p, [expected_range, 0.0, 0.0], atol=1e-12)

    def test_pitch30_with_offsets(self, identity_pose):
        intr = CameraIntrinsics(700.0, 700.0, 640.0, 360.0, 1280, 720)
        extr = initial_extrinsic_guess(1.5, 2.0, np.deg2rad(30.0))
        p = ipm_backproject(np.array([640.0, 360.0]), identity_pose, extr, intr)
        expected = np.array([2.0 + 1.5 / math.tan(np.deg2rad(30.0)), 0.0, 0.0])
        np.testing.assert_allclose(p, expected, atol=1e-3)
        assert abs(expected[0] - 4.598) < 1e-3

    def test_horizon_pixel_raises(self, intr, extr):
        v_h = horizon_row(extr, intr)
        with pytest.raises(RayParallelToGround):
            ipm_backproject_body(np.array([640.0, v_h - 5.0]), extr, intr)

    def test_body_z_exactly_zero(self, intr, extr):
        p = ipm_backproject_body(np.array([700.0, 500.0]), extr, intr)
        assert p[2] == 0.0

    def test_roundtrip_below_horizon(self, intr, extr, identity_pose):
        rng = np.random.default_rng(1)
        v_h = horizon_row(extr, intr)
        us = rng.uniform(0, intr.width - 1, 200)
        vs = rng.uniform(v_h + 20, intr.height - 1, 200)
        for u, v in zip(us, vs):
            p = ipm_backproject(np.array([u, v]), identity_pose, extr, intr)
            px = project(p, identity_pose, extr, intr)
            np.testing.assert_allclose(px, [u, v], atol=1e-6)

    def test_vectorized_matches_scalar(self, intr, extr, identity_pose):
        px = np.array([[640.0, 500.0], [300.0, 600.0], [1000.0, 450.0]])
        pts, valid = ipm_backproject_points(px, identity_pose, extr, intr)
        assert valid.all()
        for i in range(3):
            np.testing.assert_allclose(
                pts[i], ipm_backproject(px[i], identity_pose, extr, intr), atol=1e-12
            )

    def test_pose_transform_applied(self, intr, extr):
        pose = pose_at(x=10.0, y=-3.0, yaw=0.5, frame_id=4)
        px = np.array([640.0, 550.0])
        p_body = ipm_backproject_body(px, extr, intr)
        p_world = ipm_backproject(px, pose, extr, intr)
        np.testing.assert_allclose(p_world, pose.transform.apply(p_body), atol=1e-12)


class TestHomography:
    def test_consistency_with_backprojection(self, intr, extr):
        H = compose_homography(extr, intr)
        rng = np.random.default_rng(2)
        v_h = horizon_row(extr, intr)
        n = 10_000
        px = np.column_stack(
            [
                rng.uniform(0, intr.width - 1, n),
                rng.uniform(v_h + 10, intr.height - 1, n),
            ]
        )
        pts, valid = ipm_backproject_points(px, pose_at(), extr, intr)
        assert valid.all()
        ground_h = np.column_stack([pts[:, 0], pts[:, 1], np.ones(n)])
        proj = ground_h @ H.T
        proj = proj[:, :2] / proj[:, 2:3]
        np.testing.assert_allclose(proj, px, atol=1e-6)

    def test_rank_three(self, intr):
        for pitch in [5.0, 30.0, 60.0, 89.0]:
            extr = initial_extrinsic_guess(1.2, 0.0, np.deg2rad(pitch))
            H = compose_homography(extr, intr)
            assert abs(np.linalg.det(H)) > 0

    def test_nadir_geometry(self, intr):
        # Straight-down camera: principal point maps to the ground point
        # directly beneath the camera center (oracle: nadir geometry).
        extr = initial_extrinsic_guess(2.0, 0.5, np.deg2rad(90.0))
        p = ipm_backproject_body(np.array([intr.cx, intr.cy]), extr, intr)
        np.testing.assert_allclose(p, [0.5, 0.0, 0.0], atol=1e-12)
        H = compose_homography(extr, intr)
        px_h = H @ np.array([0.5, 0.0, 1.0])
        np.testing.assert_allclose(px_h[:2] / px_h[2], [intr.cx, intr.cy], atol=1e-9)


class TestExtrinsicGuess:
    def test_zero_pitch_is_nominal(self):
        extr = initial_extrinsic_guess(1.5, 2.0, 0.0)
        np.testing.assert_allclose(extr.rotation, NOMINAL_CAM_TO_BODY, atol=1e-15)
        np.testing.assert_allclose(extr.translation, [2.0, 0.0, 1.5], atol=1e-15)

    def test_pitch_is_camera_x_rotation(self):
        extr = initial_extrinsic_guess(1.5, 2.0, 0.1)
        delta = NOMINAL_CAM_TO_BODY.T @ extr.rotation
        np.testing.assert_allclose(delta, rot_x(-0.1), atol=1e-12)
        assert extrinsic_pitch(extr) == pytest.approx(0.1, abs=1e-12)

    def test_zero_height_rejected(self):
        with pytest.raises(ValueError):
            initial_extrinsic_guess(0.0, 2.0, 0.1)

    def test_perturbation_angles(self):
        extr = initial_extrinsic_guess(1.5, 1.0, np.deg2rad(10.0))
        bumped = perturb_extrinsic(extr, d_pitch=np.deg2rad(2.0))
        assert extrinsic_pitch(bumped) == pytest.approx(np.deg2rad(12.0), abs=1e-9)


class TestSe3:
    def test_log_identity_is_zero(self):
        np.testing.assert_allclose(se3_log(RigidTransform.identity()), np.zeros(6))

    def test_exp_log_roundtrip_random(self):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            xi = rng.uniform(-1, 1, 6) * np.array([5, 5, 5, 1.5, 1.5, 1.5])
            T = se3_exp(xi)
            xi_back = se3_log(T)
            T2 = se3_exp(xi_back)
            worst = max(worst, np.abs(T.matrix - T2.matrix).max())
        assert worst < 1e-9

    def test_pure_translation(self):
        T = RigidTransform(np.eye(3), np.array([1.0, 2.0, 3.0]))
        np.testing.assert_allclose(se3_log(T), [1, 2, 3, 0, 0, 0], atol=1e-15)

    def test_log_near_pi_raises(self):
        T = RigidTransform(rot_z(math.pi - 1e-9), np.zeros(3))
        with pytest.raises(AngleNearPi):
            se3_log(T)

    def test_left_jacobian_matches_finite_differences(self):
        # Oracle: d/d(eps) log(exp((xi + eps*e)^)) = Jl(xi)^-1 computed
        # column by column with central differences.
        rng = np.random.default_rng(4)
        for _ in range(20):
            xi = rng.uniform(-1, 1, 6)
            h = 1e-6
            fd = np.zeros((6, 6))
            for j in range(6):
                e = np.zeros(6)
                e[j] = h
                a = se3_log(se3_exp(xi + e))
                b = se3_log(se3_exp(xi - e))
                fd[:, j] = (np.asarray(a) - np.asarray(b)) / (2 * h)
            # d exp/d xi expressed through log: fd should be identity
            np.testing.assert_allclose(fd, np.eye(6), atol=1e-5)
            # and the defining identity of the right Jacobian inverse:
            Jr_inv = se3_right_jacobian_inv(xi)
            fd2 = np.zeros((6, 6))
            T0 = se3_exp(xi)
            for j in range(6):
                e = np.zeros(6)
                e[j] = h
                a = se3_log(T0.compose(se3_exp(e)))
                b = se3_log(T0.compose(se3_exp(-e)))
                fd2[:, j] = (a - b) / (2 * h)
            np.testing.assert_allclose(Jr_inv, fd2, atol=1e-5)

    def test_composition_chain_stays_orthonormal(self):
        rng = np.random.default_rng(5)
        T = RigidTransform.identity()
        step = RigidTransform(
            rot_z(0.01) @ rot_x(0.003), np.array([0.1, 0.0, 0.0])
        )
        for _ in range(10_000):
            T = T.compose(step)
        err = np.abs(T.rotation.T @ T.rotation - np.eye(3)).max()
        assert err < 1e-9


class TestWorldToCamera:
    def test_chain_against_matrix_composition(self, intr, extr):
        # Oracle: full 4x4 matrix chain computed independently.
        pose = pose_at(x=3.0, y=1.0, yaw=0.7, frame_id=1)
        T_wb = pose.transform.matrix
        T_bc = extr.transform.matrix
        T_cw = np.linalg.inv(T_wb @ T_bc)
        rng = np.random.default_rng(6)
        pts = rng.uniform(-10, 10, size=(20, 3))
        expected = (np.column_stack([pts, np.ones(20)]) @ T_cw.T)[:, :3]
        np.testing.assert_allclose(world_to_camera(pts, pose, extr), expected, atol=1e-12)
