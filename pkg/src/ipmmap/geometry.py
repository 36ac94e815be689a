"""Frames, SE(3) algebra, pinhole projection, and flat-ground back-projection.

Conventions, fixed for the whole package:

  body frame    x forward, y left, z up, origin on the ground plane
                (the ground is z_b = 0, so camera height = extrinsic z)
  camera frame  z forward along the optical axis, x right, y down
  world frame   z up

``Extrinsics`` is the camera-to-body transform; ``VehiclePose`` is the
body-to-world transform. Positive pitch tilts the camera down toward the
ground (rotation about the camera x axis).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import AngleNearPi, NonPositiveDepth, RayParallelToGround

# Depth below which a point counts as behind the camera plane (meters).
MIN_DEPTH = 1e-6
# Unit ray z components above this are treated as parallel to the ground.
HORIZON_EPS = -1e-9
# Compositions between re-orthonormalization passes.
RENORM_INTERVAL = 100

# Camera axes expressed in the body frame for a level, forward-looking
# camera: cam x -> -y_body (right), cam y -> -z_body (down), cam z -> +x_body.
NOMINAL_CAM_TO_BODY = np.array(
    [
        [0.0, 0.0, 1.0],
        [-1.0, 0.0, 0.0],
        [0.0, -1.0, 0.0],
    ]
)


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array(
            [[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]]
        )

    def contains(self, px: np.ndarray) -> np.ndarray:
        """Vectorized in-bounds test for pixels of shape (..., 2)."""
        px = np.asarray(px)
        u, v = px[..., 0], px[..., 1]
        return (u >= 0) & (u <= self.width - 1) & (v >= 0) & (v <= self.height - 1)


@dataclass(frozen=True)
class RigidTransform:
    """Rotation + translation, validated to be a proper rigid transform."""

    rotation: np.ndarray
    translation: np.ndarray
    compositions: int = field(default=0, compare=False)

    def __post_init__(self):
        R = np.array(self.rotation, dtype=float)
        t = np.array(self.translation, dtype=float).reshape(3)
        if R.shape != (3, 3):
            raise ValueError("rotation must be 3x3")
        err = np.abs(R.T @ R - np.eye(3)).max()
        if err >= 1e-9:
            raise ValueError(f"rotation not orthonormal (|R'R - I| = {err:.3e})")
        det = np.linalg.det(R)
        if abs(det - 1.0) >= 1e-9:
            raise ValueError(f"rotation determinant {det} != 1")
        object.__setattr__(self, "rotation", _readonly(R))
        object.__setattr__(self, "translation", _readonly(t))

    @staticmethod
    def identity() -> "RigidTransform":
        return RigidTransform(np.eye(3), np.zeros(3))

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        R = self.rotation @ other.rotation
        t = self.rotation @ other.translation + self.translation
        n = self.compositions + other.compositions + 1
        if n >= RENORM_INTERVAL:
            R = orthonormalize(R)
            n = 0
        return RigidTransform(R, t, compositions=n)

    def inverse(self) -> "RigidTransform":
        Rt = self.rotation.T
        return RigidTransform(Rt, -Rt @ self.translation, compositions=self.compositions)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Transform points of shape (3,) or (n, 3)."""
        p = np.asarray(points, dtype=float)
        return p @ self.rotation.T + self.translation

    @property
    def matrix(self) -> np.ndarray:
        T = np.eye(4)
        T[:3, :3] = self.rotation
        T[:3, 3] = self.translation
        return T


def orthonormalize(R: np.ndarray) -> np.ndarray:
    """Nearest orthonormal matrix (polar correction via SVD)."""
    U, _, Vt = np.linalg.svd(R)
    out = U @ Vt
    if np.linalg.det(out) < 0:
        U[:, -1] = -U[:, -1]
        out = U @ Vt
    return out


@dataclass(frozen=True)
class VehiclePose:
    """Body-to-world transform at one timestamp."""

    transform: RigidTransform
    timestamp: float
    frame_id: int


@dataclass(frozen=True)
class Extrinsics:
    """Camera-to-body transform; translation z is the camera height."""

    transform: RigidTransform

    def __post_init__(self):
        if self.transform.translation[2] <= 0:
            raise ValueError("camera center must be above the ground plane")

    @property
    def rotation(self) -> np.ndarray:
        return self.transform.rotation

    @property
    def translation(self) -> np.ndarray:
        return self.transform.translation

    @property
    def height(self) -> float:
        return float(self.transform.translation[2])


def initial_extrinsic_guess(
    camera_height: float, camera_forward_offset: float, pitch_guess: float
) -> Extrinsics:
    """Nominal extrinsic with zero roll/yaw and the given downward pitch."""
    if camera_height <= 0:
        raise ValueError("camera_height must be positive")
    R = NOMINAL_CAM_TO_BODY @ rot_x(-pitch_guess)
    t = np.array([camera_forward_offset, 0.0, camera_height])
    return Extrinsics(RigidTransform(R, t))


def perturb_extrinsic(
    extr: Extrinsics,
    d_pitch: float = 0.0,
    d_yaw: float = 0.0,
    d_roll: float = 0.0,
    d_translation=(0.0, 0.0, 0.0),
) -> Extrinsics:
    """Apply small camera-frame angle offsets and a body-frame translation shift.

    Pitch is about the camera x axis (positive down), yaw about camera y,
    roll about camera z, applied in that order.
    """
    R = extr.rotation @ rot_x(-d_pitch) @ rot_y(d_yaw) @ rot_z(d_roll)
    t = extr.translation + np.asarray(d_translation, dtype=float)
    return Extrinsics(RigidTransform(orthonormalize(R), t))


def extrinsic_pitch(extr: Extrinsics) -> float:
    """Downward pitch of the optical axis relative to the body xy plane."""
    axis = extr.rotation @ np.array([0.0, 0.0, 1.0])
    return math.asin(max(-1.0, min(1.0, -axis[2])))


# ---------------------------------------------------------------------------
# Projection and back-projection


def project_camera_points(p_cam: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Pinhole projection of camera-frame points (..., 3) -> (..., 2)."""
    p = np.asarray(p_cam, dtype=float)
    z = p[..., 2]
    u = intr.fx * p[..., 0] / z + intr.cx
    v = intr.fy * p[..., 1] / z + intr.cy
    return np.stack([u, v], axis=-1)


def world_to_camera(
    points: np.ndarray, pose: VehiclePose, extr: Extrinsics
) -> np.ndarray:
    """World points (..., 3) expressed in the camera frame."""
    p = np.asarray(points, dtype=float)
    p_body = (p - pose.transform.translation) @ pose.transform.rotation
    return (p_body - extr.translation) @ extr.rotation


def project(
    point_world: np.ndarray,
    pose: VehiclePose,
    extr: Extrinsics,
    intr: CameraIntrinsics,
) -> np.ndarray:
    """Project one world point to pixel coordinates.

    Raises NonPositiveDepth when the point sits at or behind the camera
    plane. The result may lie outside the image bounds; callers filter.
    """
    p_cam = world_to_camera(np.asarray(point_world, dtype=float), pose, extr)
    if p_cam[2] <= MIN_DEPTH:
        raise NonPositiveDepth(f"camera-frame depth {p_cam[2]:.3e} <= {MIN_DEPTH}")
    return project_camera_points(p_cam, intr)


def project_points(
    points: np.ndarray,
    pose: VehiclePose,
    extr: Extrinsics,
    intr: CameraIntrinsics,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized projection: returns (pixels (n, 2), valid (n,)).

    Pixels with non-positive depth are flagged invalid instead of raising.
    """
    p_cam = world_to_camera(np.atleast_2d(points), pose, extr)
    valid = p_cam[:, 2] > MIN_DEPTH
    safe = np.where(valid[:, None], p_cam, [0.0, 0.0, 1.0])
    return project_camera_points(safe, intr), valid


def pixel_rays_camera(px: np.ndarray, intr: CameraIntrinsics) -> np.ndarray:
    """Unit-depth camera-frame ray directions for pixels (..., 2)."""
    p = np.asarray(px, dtype=float)
    x = (p[..., 0] - intr.cx) / intr.fx
    y = (p[..., 1] - intr.cy) / intr.fy
    return np.stack([x, y, np.ones_like(x)], axis=-1)


def ipm_backproject_body(
    px: np.ndarray, extr: Extrinsics, intr: CameraIntrinsics
) -> np.ndarray:
    """Intersect one pixel ray with the body-frame ground plane z_b = 0."""
    d_cam = pixel_rays_camera(px, intr)
    d_body = extr.rotation @ d_cam
    d_unit = d_body / np.linalg.norm(d_body)
    if d_unit[2] >= HORIZON_EPS:
        raise RayParallelToGround(
            f"ray z component {d_unit[2]:.3e} at or above the horizon"
        )
    t = extr.translation
    s = -t[2] / d_body[2]
    p = t + s * d_body
    p[2] = 0.0  # exact by construction, assigned rather than computed
    return p


def ipm_backproject(
    px: np.ndarray,
    pose: VehiclePose,
    extr: Extrinsics,
    intr: CameraIntrinsics,
) -> np.ndarray:
    """Back-project one pixel to the world via the flat-ground assumption."""
    return pose.transform.apply(ipm_backproject_body(px, extr, intr))


def ipm_backproject_points(
    px: np.ndarray,
    pose: VehiclePose,
    extr: Extrinsics,
    intr: CameraIntrinsics,
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized back-projection: returns (world points (n, 3), valid (n,))."""
    d_cam = pixel_rays_camera(np.atleast_2d(px), intr)
    d_body = d_cam @ extr.rotation.T
    norms = np.linalg.norm(d_body, axis=1)
    valid = d_body[:, 2] / norms < HORIZON_EPS
    dz = np.where(valid, d_body[:, 2], -1.0)
    t = extr.translation
    s = -t[2] / dz
    p_body = t + s[:, None] * d_body
    p_body[:, 2] = 0.0
    return pose.transform.apply(p_body), valid


def compose_homography(extr: Extrinsics, intr: CameraIntrinsics) -> np.ndarray:
    """3x3 matrix mapping homogeneous ground coordinates (x_b, y_b, 1) to pixels.

    Built from the intrinsics and the first two columns of the body-to-camera
    rotation plus the body-to-camera translation.
    """
    R_cb = extr.rotation.T
    t_cb = -R_cb @ extr.translation
    G = np.column_stack([R_cb[:, 0], R_cb[:, 1], t_cb])
    return intr.matrix @ G


# ---------------------------------------------------------------------------
# SE(3) log/exp, 6-vectors ordered (translation, rotation)


def so3_exp(phi: np.ndarray) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-10:
        return np.eye(3) + K + 0.5 * (K @ K)
    a, a2 = angle, angle * angle
    return np.eye(3) + (math.sin(a) / a) * K + ((1.0 - math.cos(a)) / a2) * (K @ K)


def so3_log(R: np.ndarray) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    cos_angle = max(-1.0, min(1.0, 0.5 * (np.trace(R) - 1.0)))
    angle = math.acos(cos_angle)
    if angle > math.pi - 1e-6:
        raise AngleNearPi(f"rotation angle {angle} too close to pi")
    w = 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if angle < 1e-10:
        return w  # first-order: 0.5*(R - R') already equals phi to O(angle^3)
    return (angle / math.sin(angle)) * w


def _so3_left_jacobian(phi: np.ndarray) -> np.ndarray:
    angle = np.linalg.norm(phi)
    K = skew(phi)
    if angle < 1e-8:
        return np.eye(3) + 0.5 * K + (K @ K) / 6.0
    a2, a3 = angle * angle, angle * angle * angle
    return (
        np.eye(3)
        + ((1.0 - math.cos(angle)) / a2) * K
        + ((angle - math.sin(angle)) / a3) * (K @ K)
    )


def se3_exp(xi: np.ndarray) -> RigidTransform:
    """Exponential map; xi = (rho, phi) with translation first."""
    xi = np.asarray(xi, dtype=float).reshape(6)
    rho, phi = xi[:3], xi[3:]
    R = so3_exp(phi)
    t = _so3_left_jacobian(phi) @ rho
    return RigidTransform(orthonormalize(R), t)


def se3_log(t: RigidTransform) -> np.ndarray:
    """Logarithm map; returns (rho, phi) with translation first."""
    phi = so3_log(t.rotation)
    V = _so3_left_jacobian(phi)
    rho = np.linalg.solve(V, t.translation)
    return np.concatenate([rho, phi])


def se3_adjoint_small(xi: np.ndarray) -> np.ndarray:
    """ad_xi for xi = (rho, phi): [[skew(phi), skew(rho)], [0, skew(phi)]]."""
    rho, phi = xi[:3], xi[3:]
    out = np.zeros((6, 6))
    out[:3, :3] = skew(phi)
    out[:3, 3:] = skew(rho)
    out[3:, 3:] = skew(phi)
    return out


def se3_left_jacobian(xi: np.ndarray) -> np.ndarray:
    """Left Jacobian of SE(3) via the adjoint series sum_n ad^n / (n+1)!.

    Converges to machine precision for |phi| < pi; exact enough for the
    pose-prior linearization and verified against finite differences.
    """
    A = se3_adjoint_small(np.asarray(xi, dtype=float))
    J = np.eye(6)
    term = np.eye(6)
    for n in range(1, 40):
        term = term @ A / (n + 1)
        J = J + term
        if np.abs(term).max() < 1e-18:
            break
    return J


def se3_right_jacobian_inv(xi: np.ndarray) -> np.ndarray:
    """Inverse right Jacobian: d/d(delta) log(exp(xi^) exp(delta^)) at 0."""
    Jl = se3_left_jacobian(-np.asarray(xi, dtype=float))
    return np.linalg.inv(Jl)
