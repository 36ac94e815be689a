"""Synthetic ground truth: worlds, trajectories, and rendered observations.

Everything is driven by one 64-bit seed through numpy's Philox counter-based
generator (sub-streams via fixed jumps), so a scenario is byte-for-byte
reproducible. The virtual detector projects true marking corners and lane
samples through a per-frame vibrated extrinsic, adds pixel noise, and tags
every observation with the generating element id (oracle channel for tests;
the front end never reads it).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .frontend import LaneObservation, MarkingObservation
from .geometry import (
    CameraIntrinsics,
    Extrinsics,
    RigidTransform,
    VehiclePose,
    initial_extrinsic_guess,
    perturb_extrinsic,
    project_points,
    rot_z,
)
from .spline import LaneElement, sample_spline

MARKING_SIZES = {
    # (extent along the route, lateral extent) in meters
    "crosswalk": (1.8, 3.0),
    "arrow_straight": (2.5, 0.6),
    "arrow_left": (2.5, 0.8),
    "speed_limit": (2.0, 1.2),
    "diamond": (1.2, 1.2),
}

DEFAULT_CLASSES = tuple(MARKING_SIZES)


@dataclass(frozen=True)
class WorldConfig:
    lane_count: int = 4
    lane_width: float = 3.5
    length: float = 500.0
    curvature: str = "straight"  # straight | arc | s_curve | straight_arc
    radius: float = 200.0
    marking_density: float = 4.0  # markings per 100 m
    marking_classes: tuple = DEFAULT_CLASSES
    relief_amplitude: float = 0.0
    relief_wavelength: float = 40.0
    lane_spacing: float = 3.0  # ground-truth control-point spacing


@dataclass(frozen=True)
class TrajectoryConfig:
    speed: float = 5.0  # m/s
    rate: float = 10.0  # Hz
    yaw_noise_deg: float = 0.0  # mean absolute injected yaw error
    xy_noise: float = 0.0  # mean injected planar translation error (m)


@dataclass(frozen=True)
class CameraConfig:
    intrinsics: CameraIntrinsics = field(
        default_factory=lambda: CameraIntrinsics(700.0, 700.0, 640.0, 360.0, 1280, 720)
    )
    height: float = 1.5
    forward: float = 1.0
    pitch_deg: float = 12.0
    yaw_deg: float = 0.0
    roll_deg: float = 0.0
    guess_pitch_offset_deg: float = 0.0
    guess_yaw_offset_deg: float = 0.0
    guess_roll_offset_deg: float = 0.0
    guess_translation_offset: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class DetectorConfig:
    pixel_sigma: float = 1.0
    sigma_h: float = 0.0  # per-frame camera height vibration (m)
    sigma_theta_deg: float = 0.0  # per-frame pitch vibration (deg)
    max_range: float = 15.0
    min_range: float = 1.5
    lane_step: float = 0.5
    lane_lateral_bias: float = 0.0
    lane_bias_min_range: float = 25.0


@dataclass(frozen=True)
class ScenarioConfig:
    seed: int = 0
    world: WorldConfig = field(default_factory=WorldConfig)
    trajectory: TrajectoryConfig = field(default_factory=TrajectoryConfig)
    camera: CameraConfig = field(default_factory=CameraConfig)
    detector: DetectorConfig = field(default_factory=DetectorConfig)

    def true_extrinsic(self) -> Extrinsics:
        base = initial_extrinsic_guess(
            self.camera.height, self.camera.forward, math.radians(self.camera.pitch_deg)
        )
        return perturb_extrinsic(
            base,
            d_yaw=math.radians(self.camera.yaw_deg),
            d_roll=math.radians(self.camera.roll_deg),
        )

    def guess_extrinsic(self) -> Extrinsics:
        return perturb_extrinsic(
            self.true_extrinsic(),
            d_pitch=math.radians(self.camera.guess_pitch_offset_deg),
            d_yaw=math.radians(self.camera.guess_yaw_offset_deg),
            d_roll=math.radians(self.camera.guess_roll_offset_deg),
            d_translation=self.camera.guess_translation_offset,
        )


@dataclass
class GtMarking:
    id: int
    class_label: str
    corners: np.ndarray  # (4, 3)


@dataclass
class VectorMap:
    markings: list
    lanes: list


@dataclass
class FrameObservations:
    frame_id: int
    markings: list
    lanes: list


class Route:
    """Piecewise constant-curvature centerline with closed-form geometry."""

    def __init__(self, world: WorldConfig):
        L = world.length
        if world.curvature == "straight":
            segments = [(L, 0.0)]
        elif world.curvature == "arc":
            segments = [(L, 1.0 / world.radius)]
        elif world.curvature == "s_curve":
            segments = [(L / 2, 1.0 / world.radius), (L / 2, -1.0 / world.radius)]
        elif world.curvature == "straight_arc":
            segments = [(L / 2, 0.0), (L / 2, 1.0 / world.radius)]
        else:
            raise ValueError(f"unknown curvature profile {world.curvature!r}")
        self.length = L
        self._starts = []  # (s0, x0, y0, psi0, kappa)
        s0, x0, y0, psi0 = 0.0, 0.0, 0.0, 0.0
        for seg_len, kappa in segments:
            self._starts.append((s0, x0, y0, psi0, kappa))
            if kappa == 0.0:
                x0 += seg_len * math.cos(psi0)
                y0 += seg_len * math.sin(psi0)
            else:
                psi1 = psi0 + seg_len * kappa
                x0 += (math.sin(psi1) - math.sin(psi0)) / kappa
                y0 -= (math.cos(psi1) - math.cos(psi0)) / kappa
                psi0 = psi1
            s0 += seg_len

    def pose_at(self, s):
        """Positions (n, 2) and headings (n,) for arc positions s."""
        s = np.atleast_1d(np.asarray(s, dtype=float))
        x = np.empty_like(s)
        y = np.empty_like(s)
        psi = np.empty_like(s)
        bounds = [seg[0] for seg in self._starts] + [self.length]
        for i, (s0, x0, y0, psi0, kappa) in enumerate(self._starts):
            hi = bounds[i + 1]
            mask = (s >= s0) & (s <= hi if i == len(self._starts) - 1 else s < hi)
            if not mask.any():
                continue
            u = s[mask] - s0
            if kappa == 0.0:
                x[mask] = x0 + u * math.cos(psi0)
                y[mask] = y0 + u * math.sin(psi0)
                psi[mask] = psi0
            else:
                p = psi0 + u * kappa
                x[mask] = x0 + (np.sin(p) - math.sin(psi0)) / kappa
                y[mask] = y0 - (np.cos(p) - math.cos(psi0)) / kappa
                psi[mask] = p
        return np.column_stack([x, y]), psi

    def offset_points(self, s, lateral, z=None):
        """World points at arc positions s, shifted left by ``lateral``."""
        xy, psi = self.pose_at(s)
        normal = np.column_stack([-np.sin(psi), np.cos(psi)])
        pts = xy + lateral * normal
        zcol = np.zeros(len(pts)) if z is None else np.asarray(z, dtype=float)
        return np.column_stack([pts, zcol])


def _streams(seed: int):
    base = np.random.Philox(key=seed)
    return [np.random.Generator(base.jumped(i)) for i in range(3)]


def lane_offsets(world: WorldConfig) -> np.ndarray:
    n = world.lane_count
    return (np.arange(n) - (n - 1) / 2.0) * world.lane_width


def generate_world(cfg: ScenarioConfig) -> VectorMap:
    """Deterministic ground-truth map for the scenario."""
    world = cfg.world
    rng = _streams(cfg.seed)[0]
    route = Route(world)

    lanes = []
    spacing = world.lane_spacing
    n_knots = int(math.floor(world.length / spacing + 1e-9)) + 1
    knot_s = np.arange(n_knots) * spacing
    for i, offset in enumerate(lane_offsets(world)):
        interior = route.offset_points(knot_s, offset)
        start = 2 * interior[0] - interior[1]
        end = 2 * interior[-1] - interior[-2]
        cps = np.vstack([start, interior, end])
        lanes.append(LaneElement(id=i, control_points=cps, nominal_spacing=spacing))

    markings = []
    n_markings = int(round(world.marking_density * world.length / 100.0))
    if n_markings > 0:
        margin = 15.0
        slots = np.linspace(margin, world.length - margin, n_markings)
        jitter = rng.uniform(-3.0, 3.0, n_markings)
        offsets = lane_offsets(world)
        gap_centers = (
            (offsets[:-1] + offsets[1:]) / 2.0 if len(offsets) > 1 else np.array([0.0])
        )
        for i in range(n_markings):
            s = float(np.clip(slots[i] + jitter[i], margin, world.length - margin))
            lateral = float(gap_centers[rng.integers(len(gap_centers))])
            label = str(world.marking_classes[rng.integers(len(world.marking_classes))])
            half_l, half_w = (v / 2.0 for v in MARKING_SIZES[label])
            corner_s = np.array([s + half_l, s - half_l, s - half_l, s + half_l])
            corner_lat = np.array(
                [lateral + half_w, lateral + half_w, lateral - half_w, lateral - half_w]
            )
            if world.relief_amplitude > 0:
                z = world.relief_amplitude * np.sin(
                    2.0 * math.pi * corner_s / world.relief_wavelength
                )
            else:
                z = np.zeros(4)
            xy, psi = route.pose_at(corner_s)
            normal = np.column_stack([-np.sin(psi), np.cos(psi)])
            pts = np.column_stack([xy + corner_lat[:, None] * normal, z])
            markings.append(GtMarking(id=i, class_label=label, corners=pts))
    return VectorMap(markings=markings, lanes=lanes)


def generate_trajectory(cfg: ScenarioConfig) -> tuple[list, list]:
    """True poses along the centerline plus a noise-injected prior copy.

    Injected yaw and planar translation errors are zero-mean with mean
    absolute magnitude equal to the configured levels.
    """
    traj = cfg.trajectory
    rng = _streams(cfg.seed)[1]
    route = Route(cfg.world)
    step = traj.speed / traj.rate
    n_frames = int(math.floor(cfg.world.length / step + 1e-9)) + 1
    s = np.arange(n_frames) * step
    xy, psi = route.pose_at(s)

    yaw_level = math.radians(traj.yaw_noise_deg)
    sigma_yaw = yaw_level * math.sqrt(math.pi / 2.0)  # E|N(0,s)| = s*sqrt(2/pi)
    sigma_xy = traj.xy_noise * math.sqrt(2.0 / math.pi)  # E|2d N| = s*sqrt(pi/2)
    dyaw = rng.normal(0.0, sigma_yaw, n_frames) if sigma_yaw > 0 else np.zeros(n_frames)
    dxy = (
        rng.normal(0.0, sigma_xy, (n_frames, 2))
        if sigma_xy > 0
        else np.zeros((n_frames, 2))
    )

    true_poses, prior_poses = [], []
    for k in range(n_frames):
        t = np.array([xy[k, 0], xy[k, 1], 0.0])
        true_poses.append(
            VehiclePose(RigidTransform(rot_z(psi[k]), t), timestamp=k / traj.rate, frame_id=k)
        )
        tn = t + np.array([dxy[k, 0], dxy[k, 1], 0.0])
        prior_poses.append(
            VehiclePose(
                RigidTransform(rot_z(psi[k] + dyaw[k]), tn),
                timestamp=k / traj.rate,
                frame_id=k,
            )
        )
    return true_poses, prior_poses


def _image_ccw(corners_px: np.ndarray) -> np.ndarray:
    """Reorder 4 pixels counter-clockwise as displayed (y grows downward)."""
    u, v = corners_px[:, 0], -corners_px[:, 1]
    area = 0.0
    for i in range(4):
        j = (i + 1) % 4
        area += u[i] * v[j] - u[j] * v[i]
    return corners_px if area > 0 else corners_px[::-1]


def render_observations(
    world_map: VectorMap,
    true_poses: list,
    true_extr: Extrinsics,
    intr: CameraIntrinsics,
    cfg: ScenarioConfig,
) -> list:
    """Per-frame pixel observations through a vibrated extrinsic."""
    det = cfg.detector
    rng = _streams(cfg.seed)[2]
    sigma_theta = math.radians(det.sigma_theta_deg)

    lane_samples = []
    for lane in world_map.lanes:
        pts = sample_spline(lane, det.lane_step)
        tangents = np.gradient(pts, axis=0)
        tangents /= np.linalg.norm(tangents, axis=1, keepdims=True)
        normals = np.column_stack(
            [-tangents[:, 1], tangents[:, 0], np.zeros(len(pts))]
        )
        lane_samples.append((lane.id, pts, normals))

    frames = []
    for pose in true_poses:
        dtheta = rng.normal(0.0, sigma_theta) if sigma_theta > 0 else 0.0
        dh = rng.normal(0.0, det.sigma_h) if det.sigma_h > 0 else 0.0
        extr_k = (
            perturb_extrinsic(true_extr, d_pitch=dtheta, d_translation=(0.0, 0.0, dh))
            if (dtheta or dh)
            else true_extr
        )
        inv_pose = pose.transform.inverse()

        marking_obs = []
        for gm in world_map.markings:
            body = inv_pose.apply(gm.corners)
            fwd = body[:, 0].mean()
            if not (det.min_range <= fwd <= det.max_range):
                continue
            px, ok = project_points(gm.corners, pose, extr_k, intr)
            if not ok.all() or not intr.contains(px).all():
                continue
            noisy = px + rng.normal(0.0, det.pixel_sigma, (4, 2))
            noisy = _image_ccw(noisy)
            shift = int(rng.integers(4))
            noisy = np.roll(noisy, shift, axis=0)
            marking_obs.append(
                MarkingObservation(
                    frame_id=pose.frame_id,
                    class_label=gm.class_label,
                    corners=noisy,
                    gt_id=gm.id,
                )
            )

        lane_obs = []
        for lane_id, pts, normals in lane_samples:
            body = inv_pose.apply(pts)
            mask = (
                (body[:, 0] >= det.min_range)
                & (body[:, 0] <= det.max_range)
                & (np.abs(body[:, 1]) <= 30.0)
            )
            if mask.sum() < 2:
                continue
            visible = pts[mask]
            if det.lane_lateral_bias != 0.0:
                far = body[mask, 0] > det.lane_bias_min_range
                visible = visible + np.where(
                    far[:, None], det.lane_lateral_bias, 0.0
                ) * normals[mask]
            px, ok = project_points(visible, pose, extr_k, intr)
            keep = ok & intr.contains(px)
            if keep.sum() < 2:
                continue
            noisy = px[keep] + rng.normal(0.0, det.pixel_sigma, (int(keep.sum()), 2))
            order = np.argsort(-noisy[:, 1], kind="stable")  # bottom-up
            lateral_sign = np.median(body[mask, 1][keep])
            side = "left" if lateral_sign > 0 else "right"
            lane_obs.append(
                LaneObservation(
                    frame_id=pose.frame_id,
                    points=noisy[order],
                    side_hint=side,
                    gt_id=lane_id,
                )
            )
        frames.append(
            FrameObservations(frame_id=pose.frame_id, markings=marking_obs, lanes=lane_obs)
        )
    return frames
