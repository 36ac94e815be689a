"""First-order error propagation for flat-ground back-projection.

The back-projected body-frame point depends on pixel position, camera
pitch, and camera height. Its covariance is assembled from analytic
Jacobians against a per-axis pixel error vector plus pitch and height
standard deviations; the trace is the scalar uncertainty used to rank
lane points before control-point fitting.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import RayParallelToGround
from .geometry import CameraIntrinsics, Extrinsics, pixel_rays_camera

HORIZON_EPS = -1e-9


@dataclass(frozen=True)
class NoiseModel:
    """Assumed detector/vehicle noise for uncertainty estimation.

    pixel_error is a deterministic per-axis error magnitude vector, not a
    standard deviation pair: it enters the covariance as an outer product.
    """

    pixel_error: tuple[float, float] = (1.0, 1.0)
    sigma_theta: float = np.deg2rad(0.3)
    sigma_h: float = 0.02

    def __post_init__(self):
        if min(self.pixel_error) < 0 or self.sigma_theta < 0 or self.sigma_h < 0:
            raise ValueError("noise components must be non-negative")


@dataclass(frozen=True)
class UncertaintyEstimate:
    covariance: np.ndarray  # (3, 3), m^2
    trace_value: float

    def __post_init__(self):
        cov = np.asarray(self.covariance, dtype=float)
        if np.abs(cov - cov.T).max() > 1e-12:
            raise ValueError("covariance must be symmetric")
        if abs(self.trace_value - np.trace(cov)) > 1e-12:
            raise ValueError("trace_value must equal the covariance trace")


def ipm_jacobians(
    px: np.ndarray, extr: Extrinsics, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Analytic derivatives of the body-frame ground point.

    Returns (J_uv (3, 2), J_theta (3,), J_h (3,)) with respect to the pixel
    coordinates, the camera pitch (about the camera x axis, positive down),
    and the camera height.
    """
    J_uv, J_theta, J_h, valid = ipm_jacobians_many(np.atleast_2d(px), extr, intr)
    if not valid[0]:
        raise RayParallelToGround("pixel at or above the horizon")
    return J_uv[0], J_theta[0], J_h[0]


def ipm_jacobians_many(
    px: np.ndarray, extr: Extrinsics, intr: CameraIntrinsics
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized ipm_jacobians: adds a validity mask instead of raising."""
    px = np.atleast_2d(np.asarray(px, dtype=float))
    R = extr.rotation
    t = extr.translation
    h = t[2]

    d_cam = pixel_rays_camera(px, intr)  # (n, 3), unit depth
    d = d_cam @ R.T  # body-frame directions
    norms = np.linalg.norm(d, axis=1)
    valid = d[:, 2] / norms < HORIZON_EPS
    dz = np.where(valid, d[:, 2], -1.0)
    s = -h / dz  # ray scale to the ground plane

    # Direction derivatives: columns of R scaled by the pixel spacing, and
    # the pitch generator acting on the camera ray.
    dd_du = R[:, 0][None, :] / intr.fx
    dd_dv = R[:, 1][None, :] / intr.fy
    dd_dtheta = (
        np.stack(
            [np.zeros(len(px)), d_cam[:, 2], -d_cam[:, 1]], axis=1
        )
        @ R.T
    )

    def point_derivative(dd, dc_z=0.0):
        ds = -dc_z / dz + h * dd[..., 2] / (dz * dz)
        out = ds[:, None] * d + s[:, None] * dd
        if dc_z:
            out = out + np.array([0.0, 0.0, dc_z])
        out[:, 2] = 0.0  # ground-plane point stays on the plane
        return out

    J_u = point_derivative(np.broadcast_to(dd_du, d.shape))
    J_v = point_derivative(np.broadcast_to(dd_dv, d.shape))
    J_theta = point_derivative(dd_dtheta)
    J_h = point_derivative(np.zeros_like(d), dc_z=1.0)
    J_uv = np.stack([J_u, J_v], axis=2)
    return J_uv, J_theta, J_h, valid


def point_uncertainty(
    jacobians: tuple[np.ndarray, np.ndarray, np.ndarray], noise: NoiseModel
) -> UncertaintyEstimate:
    """Covariance of one back-projected point under the noise model."""
    J_uv, J_theta, J_h = jacobians
    e = np.asarray(noise.pixel_error, dtype=float)
    v_px = J_uv @ e
    cov = (
        np.outer(v_px, v_px)
        + noise.sigma_theta**2 * np.outer(J_theta, J_theta)
        + noise.sigma_h**2 * np.outer(J_h, J_h)
    )
    cov = 0.5 * (cov + cov.T)
    return UncertaintyEstimate(covariance=cov, trace_value=float(np.trace(cov)))


def uncertainty_trace(est: UncertaintyEstimate) -> float:
    return float(np.sum(np.diag(est.covariance)))


def point_traces(
    px: np.ndarray, extr: Extrinsics, intr: CameraIntrinsics, noise: NoiseModel
) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized traces for pixels (n, 2); returns (traces, valid)."""
    J_uv, J_theta, J_h, valid = ipm_jacobians_many(px, extr, intr)
    e = np.asarray(noise.pixel_error, dtype=float)
    v_px = J_uv @ e
    traces = (
        np.sum(v_px * v_px, axis=1)
        + noise.sigma_theta**2 * np.sum(J_theta * J_theta, axis=1)
        + noise.sigma_h**2 * np.sum(J_h * J_h, axis=1)
    )
    return traces, valid


def select_low_uncertainty(points: list, n: int) -> list:
    """Top-n lowest-trace entries of (payload, UncertaintyEstimate) pairs.

    Ties keep the earlier entry; the selection is re-emitted in original
    sequence order so downstream fitting sees along-lane ordering.
    """
    if n <= 0:
        return []
    traces = np.array([est.trace_value for _, est in points])
    order = np.argsort(traces, kind="stable")[: min(n, len(points))]
    keep = np.sort(order)
    return [points[i][0] for i in keep]


def select_indices_by_trace(traces: np.ndarray, n: int, trace_gate: float) -> np.ndarray:
    """Indices of the <= n lowest traces under the gate, in original order."""
    traces = np.asarray(traces, dtype=float)
    eligible = np.flatnonzero(traces <= trace_gate)
    if n <= 0 or eligible.size == 0:
        return np.array([], dtype=int)
    order = np.argsort(traces[eligible], kind="stable")[: min(n, eligible.size)]
    return np.sort(eligible[order])
