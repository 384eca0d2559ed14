import math

import numpy as np
import pytest

from pilevol.campaign import feature_wall
from pilevol.frames import CameraModel, Pose, RigidTransform, front_camera_mount


@pytest.fixture
def bare_camera() -> CameraModel:
    """Camera with identity mounting: camera frame == body frame."""
    return CameraModel(fx=500.0, fy=500.0, cx=320.0, cy=240.0,
                       width=640.0, height=480.0,
                       mount=RigidTransform.identity(), pixel_noise=1.0)


@pytest.fixture
def front_camera() -> CameraModel:
    return CameraModel(fx=500.0, fy=500.0, cx=640.0, cy=480.0,
                       width=1280.0, height=960.0,
                       mount=front_camera_mount(), pixel_noise=1.0)


@pytest.fixture
def wall_map():
    """12-feature wall at y=10 spanning x in [-4, 14], z in [2, 8]."""
    return feature_wall("y", 10.0, (-4.0, 14.0), (2.0, 8.0), 4, 3)


@pytest.fixture
def wall_pose() -> Pose:
    """Pose facing the wall fixture from 8 m away."""
    return Pose(np.array([5.0, 2.0, 5.0]), yaw=math.pi / 2.0)
