import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pilevol.frames import (CameraModel, Pose, PoseCovariance, RigidTransform,
                            numeric_jacobian, project, rotation_matrix,
                            world_to_camera, wrap_angle)
from pilevol.errors import InvalidCovarianceError


def oracle_rotation(roll, pitch, yaw):
    """Independent composition of explicit 3x3 rotation matrices."""
    cr, sr = math.cos(roll), math.sin(roll)
    cp, sp = math.cos(pitch), math.sin(pitch)
    cy, sy = math.cos(yaw), math.sin(yaw)
    rx = np.array([[1, 0, 0], [0, cr, -sr], [0, sr, cr]], dtype=float)
    ry = np.array([[cp, 0, sp], [0, 1, 0], [-sp, 0, cp]], dtype=float)
    rz = np.array([[cy, -sy, 0], [sy, cy, 0], [0, 0, 1]], dtype=float)
    return rz @ ry @ rx


class TestWorldToCamera:
    def test_identity_pose_identity_mount(self, bare_camera):
        pose = Pose(np.zeros(3))
        out = world_to_camera(pose, bare_camera, [1.0, 2.0, 3.0])
        np.testing.assert_allclose(out, [1.0, 2.0, 3.0])

    def test_pure_translation(self, bare_camera):
        pose = Pose(np.array([1.0, 0.0, 0.0]))
        out = world_to_camera(pose, bare_camera, [1.0, 0.0, 0.0])
        np.testing.assert_allclose(out, [0.0, 0.0, 0.0], atol=1e-15)

    def test_yawed_pose_matches_rotation_oracle(self, bare_camera):
        pose = Pose(np.zeros(3), yaw=math.pi / 2.0)
        point = np.array([0.0, 1.0, 0.0])
        expected = oracle_rotation(0.0, 0.0, math.pi / 2.0).T @ point
        out = world_to_camera(pose, bare_camera, point)
        np.testing.assert_allclose(out, expected, atol=1e-12)
        # the point on the global +y axis lands on the body +x axis
        np.testing.assert_allclose(out, [1.0, 0.0, 0.0], atol=1e-12)

    def test_generic_pose_matches_oracle(self, bare_camera):
        rng = np.random.default_rng(7)
        for _ in range(25):
            rpy = rng.uniform(-1.2, 1.2, 3)
            t = rng.uniform(-5, 5, 3)
            p = rng.uniform(-5, 5, 3)
            pose = Pose(t, roll=rpy[0], pitch=rpy[1], yaw=rpy[2])
            expected = oracle_rotation(*rpy).T @ (p - t)
            np.testing.assert_allclose(
                world_to_camera(pose, bare_camera, p), expected, atol=1e-10)

    def test_round_trip_many(self, bare_camera):
        rng = np.random.default_rng(3)
        worst = 0.0
        for _ in range(1000):
            pose = Pose(rng.uniform(-10, 10, 3), roll=rng.uniform(-3, 3),
                        pitch=rng.uniform(-1.5, 1.5), yaw=rng.uniform(0, 7))
            p = rng.uniform(-20, 20, 3)
            cam = world_to_camera(pose, bare_camera, p)
            back = pose.transform_to_world(
                bare_camera.mount.inverse().apply(cam))
            worst = max(worst, float(np.abs(back - p).max()))
        assert worst < 1e-9


class TestRotations:
    def test_orthonormal_det_one(self):
        rng = np.random.default_rng(11)
        for _ in range(50):
            r = rotation_matrix(*rng.uniform(-3, 3, 3))
            np.testing.assert_allclose(r @ r.T, np.eye(3), atol=1e-9)
            assert abs(np.linalg.det(r) - 1.0) < 1e-9

    def test_composition_associative(self):
        rng = np.random.default_rng(13)
        for _ in range(20):
            a, b, c = (rotation_matrix(*rng.uniform(-3, 3, 3))
                       for _ in range(3))
            np.testing.assert_allclose((a @ b) @ c, a @ (b @ c), atol=1e-12)

    @given(st.floats(-10, 10))
    def test_wrap_angle_range(self, a):
        w = wrap_angle(a)
        assert -math.pi < w <= math.pi
        assert abs(math.remainder(w - a, 2 * math.pi)) < 1e-9


class TestProject:
    def test_principal_point(self, bare_camera):
        uv = project(bare_camera, [0.0, 0.0, 1.0])
        np.testing.assert_allclose(uv, [320.0, 240.0])

    def test_behind_camera(self, bare_camera):
        assert project(bare_camera, [0.0, 0.0, -1.0]) is None
        assert project(bare_camera, [0.5, 0.5, 0.0]) is None

    def test_hand_evaluated_pinhole(self, bare_camera):
        uv = project(bare_camera, [0.1, 0.2, 2.0])
        np.testing.assert_allclose(uv, [345.0, 290.0])

    def test_out_of_bounds_flagged(self, bare_camera):
        uv = project(bare_camera, [10.0, 0.0, 1.0])
        assert uv is not None
        assert not bare_camera.contains(uv)


class TestNumericJacobian:
    def test_polynomial(self):
        jac = numeric_jacobian(lambda x: x * x, np.array([3.0]), step=1e-5)
        assert abs(jac[0, 0] - 6.0) < 1e-6

    def test_rotation_generator(self):
        def fn(theta):
            c, s = math.cos(theta[0]), math.sin(theta[0])
            return np.array([c, s])

        jac = numeric_jacobian(fn, np.array([0.0]))
        np.testing.assert_allclose(jac[:, 0], [0.0, 1.0], atol=1e-9)

    def test_linear_map_equals_matrix(self):
        rng = np.random.default_rng(5)
        a = rng.normal(size=(4, 3))
        jac = numeric_jacobian(lambda x: a @ x, rng.normal(size=3))
        np.testing.assert_allclose(jac, a, atol=1e-8)

    def test_projection_chain_richardson(self, bare_camera):
        """Halving the step changes the Jacobian by O(step^2)."""
        pose_vec = np.array([0.3, -0.2, 0.4, 0.05, -0.1, 0.2])
        target = np.array([1.0, 2.0, 9.0])

        def fn(v):
            pose = Pose(v[:3], roll=v[3], pitch=v[4], yaw=v[5])
            return project(bare_camera,
                           world_to_camera(pose, bare_camera, target))

        j1 = numeric_jacobian(fn, pose_vec, step=1e-3)
        j2 = numeric_jacobian(fn, pose_vec, step=5e-4)
        j3 = numeric_jacobian(fn, pose_vec, step=1e-6)
        # central differences: error ~ step^2, so j2 is ~4x closer than j1
        e1 = np.abs(j1 - j3).max()
        e2 = np.abs(j2 - j3).max()
        assert e2 < e1 / 2.5
        assert e1 < 1e-2


class TestPose:
    def test_angle_normalization(self):
        pose = Pose(np.zeros(3), roll=4.0, pitch=-4.0, yaw=-1.0)
        assert -math.pi < pose.roll <= math.pi
        assert -math.pi < pose.pitch <= math.pi
        assert 0.0 <= pose.yaw < 2.0 * math.pi
        np.testing.assert_allclose(pose.yaw, 2.0 * math.pi - 1.0)

    def test_vector_round_trip(self):
        pose = Pose(np.array([1.0, 2.0, 3.0]), roll=0.1, pitch=0.2, yaw=0.3)
        np.testing.assert_allclose(
            Pose.from_vector(pose.as_vector()).as_vector(), pose.as_vector())


class TestPoseCovariance:
    def test_accepts_valid(self):
        cov = PoseCovariance(np.diag([1.0, 1, 1, 0.1, 0.1, 0.1]))
        assert cov.trace == pytest.approx(3.3)

    def test_rejects_asymmetric(self):
        m = np.eye(6)
        m[0, 1] = 0.5
        with pytest.raises(InvalidCovarianceError):
            PoseCovariance(m)

    def test_rejects_negative_definite(self):
        with pytest.raises(InvalidCovarianceError):
            PoseCovariance(-np.eye(6))


class TestRigidTransform:
    def test_compose_inverse_identity(self):
        rng = np.random.default_rng(2)
        t = RigidTransform(rotation_matrix(*rng.uniform(-2, 2, 3)),
                           rng.normal(size=3))
        both = t.compose(t.inverse())
        np.testing.assert_allclose(both.rotation, np.eye(3), atol=1e-12)
        np.testing.assert_allclose(both.translation, 0.0, atol=1e-12)

    def test_from_pose_in_parent(self):
        t = RigidTransform.from_pose_in_parent([1.0, 0.0, 0.0],
                                               yaw=math.pi / 2.0)
        np.testing.assert_allclose(t.apply([1.0, 0.0, 0.0]),
                                   [1.0, 1.0, 0.0], atol=1e-12)
