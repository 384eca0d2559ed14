"""Rigid-body transforms, pinhole camera geometry, and numeric Jacobians.

Conventions used throughout the package:

* global and body frames are right-handed with z up; body x points forward,
  body y left;
* orientation is roll-pitch-yaw with body-to-global rotation
  ``R = Rz(yaw) @ Ry(pitch) @ Rx(roll)``;
* camera frame: +z forward (optical axis), +x right, +y down.

All operations here are pure functions of their inputs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidCovarianceError

TWO_PI = 2.0 * math.pi


def rot_x(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(angle: float) -> np.ndarray:
    c, s = math.cos(angle), math.sin(angle)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def rotation_matrix(roll: float, pitch: float, yaw: float) -> np.ndarray:
    """Body-to-global rotation for roll-pitch-yaw angles."""
    return rot_z(yaw) @ rot_y(pitch) @ rot_x(roll)


def wrap_angle(angle: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.fmod(angle + math.pi, TWO_PI)
    if w <= 0.0:
        w += TWO_PI
    return w - math.pi


@dataclass(frozen=True)
class RigidTransform:
    """Maps points between frames: ``apply(p) = rotation @ p + translation``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rotation",
                           np.array(self.rotation, dtype=np.float64))
        object.__setattr__(self, "translation",
                           np.array(self.translation, dtype=np.float64))

    @classmethod
    def identity(cls) -> "RigidTransform":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_pose_in_parent(cls, position, roll=0.0, pitch=0.0, yaw=0.0
                            ) -> "RigidTransform":
        """Child-to-parent transform for a child frame at ``position`` with the
        given roll-pitch-yaw orientation, both expressed in the parent."""
        return cls(rotation_matrix(roll, pitch, yaw), position)

    def inverse(self) -> "RigidTransform":
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: "RigidTransform") -> "RigidTransform":
        """``self.compose(other).apply(p) == self.apply(other.apply(p))``."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation
                              + self.translation)

    def apply(self, point) -> np.ndarray:
        p = np.asarray(point, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation @ p + self.translation
        return p @ self.rotation.T + self.translation


@dataclass(frozen=True)
class Pose:
    """6-DoF drone state: global position plus roll-pitch-yaw orientation.

    Yaw is normalized to [0, 2*pi); roll and pitch are wrapped to (-pi, pi].
    """

    position: np.ndarray
    roll: float = 0.0
    pitch: float = 0.0
    yaw: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.array(self.position, dtype=np.float64))
        if self.position.shape != (3,):
            raise ValueError("position must be a 3-vector")
        object.__setattr__(self, "roll", wrap_angle(float(self.roll)))
        object.__setattr__(self, "pitch", wrap_angle(float(self.pitch)))
        object.__setattr__(self, "yaw", float(self.yaw) % TWO_PI)

    def rotation(self) -> np.ndarray:
        """Body-to-global rotation matrix."""
        return rotation_matrix(self.roll, self.pitch, self.yaw)

    def transform_to_world(self, point_body) -> np.ndarray:
        p = np.asarray(point_body, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation() @ p + self.position
        return p @ self.rotation().T + self.position

    def transform_to_body(self, point_world) -> np.ndarray:
        p = np.asarray(point_world, dtype=np.float64)
        if p.ndim == 1:
            return self.rotation().T @ (p - self.position)
        return (p - self.position) @ self.rotation()

    def as_vector(self) -> np.ndarray:
        """(x, y, z, roll, pitch, yaw)."""
        return np.concatenate([self.position,
                               [self.roll, self.pitch, self.yaw]])

    @classmethod
    def from_vector(cls, v) -> "Pose":
        v = np.asarray(v, dtype=np.float64)
        return cls(v[:3], roll=v[3], pitch=v[4], yaw=v[5])


@dataclass(frozen=True)
class PoseCovariance:
    """6x6 covariance of a pose estimate (m^2, rad^2, mixed cross terms)."""

    matrix: np.ndarray

    def __post_init__(self):
        m = np.array(self.matrix, dtype=np.float64)
        if m.shape != (6, 6):
            raise InvalidCovarianceError("pose covariance must be 6x6")
        scale = max(np.abs(m).max(), 1.0)
        if np.abs(m - m.T).max() > 1e-12 * scale:
            raise InvalidCovarianceError("pose covariance is not symmetric")
        m = 0.5 * (m + m.T)
        min_eig = np.linalg.eigvalsh(m).min()
        if min_eig < -1e-9 * max(np.trace(m), 1e-300):
            raise InvalidCovarianceError(
                f"pose covariance has negative eigenvalue {min_eig:.3e}")
        object.__setattr__(self, "matrix", m)

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix))

    def scaled(self, factor: float) -> "PoseCovariance":
        return PoseCovariance(self.matrix * factor)


# Camera axes expressed in the body frame for the two stock mountings.
# Front: optical axis along body +x. Down: optical axis along body -z.
_FRONT_MOUNT_R = np.array([[0.0, -1.0, 0.0],
                           [0.0, 0.0, -1.0],
                           [1.0, 0.0, 0.0]])
_DOWN_MOUNT_R = np.array([[0.0, -1.0, 0.0],
                          [-1.0, 0.0, 0.0],
                          [0.0, 0.0, -1.0]])


def front_camera_mount(offset=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Body-to-camera transform for a forward-looking camera."""
    t = -_FRONT_MOUNT_R @ np.asarray(offset, dtype=np.float64)
    return RigidTransform(_FRONT_MOUNT_R, t)


def down_camera_mount(offset=(0.0, 0.0, 0.0)) -> RigidTransform:
    """Body-to-camera transform for a nadir-looking camera."""
    t = -_DOWN_MOUNT_R @ np.asarray(offset, dtype=np.float64)
    return RigidTransform(_DOWN_MOUNT_R, t)


@dataclass(frozen=True)
class CameraModel:
    """Pinhole camera with a rigid mounting on the drone body.

    ``mount`` maps body-frame points into the camera frame. ``pixel_noise``
    is the isotropic standard deviation of a detection in the image plane.
    """

    fx: float
    fy: float
    cx: float
    cy: float
    width: float
    height: float
    mount: RigidTransform = field(default_factory=front_camera_mount)
    pixel_noise: float = 1.0

    def __post_init__(self):
        if self.fx <= 0.0 or self.fy <= 0.0:
            raise ValueError("focal lengths must be positive")
        if self.width <= 0.0 or self.height <= 0.0:
            raise ValueError("image bounds must be positive")
        if self.pixel_noise < 0.0:
            raise ValueError("pixel noise must be non-negative")

    def contains(self, pixel) -> bool:
        u, v = float(pixel[0]), float(pixel[1])
        return 0.0 <= u <= self.width and 0.0 <= v <= self.height


def world_to_camera(pose: Pose, camera: CameraModel, point_world) -> np.ndarray:
    """Global-frame point into the camera frame of a camera mounted on ``pose``."""
    return camera.mount.apply(pose.transform_to_body(point_world))


def camera_to_world(pose: Pose, camera: CameraModel, point_camera) -> np.ndarray:
    return pose.transform_to_world(camera.mount.inverse().apply(point_camera))


def project(camera: CameraModel, point_camera):
    """Pinhole projection to pixels; None when the point is behind the camera.

    Bounds are not enforced here; use ``camera.contains`` on the result.
    """
    p = np.asarray(point_camera, dtype=np.float64)
    z = p[2]
    if z <= 0.0:
        return None
    return np.array([camera.fx * p[0] / z + camera.cx,
                     camera.fy * p[1] / z + camera.cy])


def numeric_jacobian(fn, at, step: float = 1e-6) -> np.ndarray:
    """Central-difference Jacobian of an n-vector -> m-vector map.

    Non-finite values returned by ``fn`` at probe points propagate into the
    result rather than raising.
    """
    at = np.asarray(at, dtype=np.float64)
    f0 = np.atleast_1d(np.asarray(fn(at), dtype=np.float64))
    jac = np.empty((f0.size, at.size))
    for c in range(at.size):
        delta = np.zeros_like(at)
        delta[c] = step
        hi = np.atleast_1d(np.asarray(fn(at + delta), dtype=np.float64))
        lo = np.atleast_1d(np.asarray(fn(at - delta), dtype=np.float64))
        jac[:, c] = (hi - lo) / (2.0 * step)
    return jac
