import numpy as np
import pytest

from ipmmap.geometry import (
    CameraIntrinsics,
    RigidTransform,
    VehiclePose,
    initial_extrinsic_guess,
    rot_z,
)


@pytest.fixture
def intr():
    return CameraIntrinsics(fx=700.0, fy=700.0, cx=640.0, cy=360.0, width=1280, height=720)


@pytest.fixture
def extr():
    # 1.5 m above the ground, 1.0 m ahead of the body origin, 12 deg down.
    return initial_extrinsic_guess(1.5, 1.0, np.deg2rad(12.0))


@pytest.fixture
def identity_pose():
    return VehiclePose(RigidTransform.identity(), timestamp=0.0, frame_id=0)


def pose_at(x=0.0, y=0.0, yaw=0.0, frame_id=0, timestamp=None):
    t = frame_id * 0.1 if timestamp is None else timestamp
    return VehiclePose(
        RigidTransform(rot_z(yaw), np.array([x, y, 0.0])),
        timestamp=t,
        frame_id=frame_id,
    )
