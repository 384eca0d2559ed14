"""2D-LiDAR simulation: hit-point geometry, first-order uncertainty
propagation, and full sweep generation against ground-truth terrain.

The sensor fan lies in the sensor y-z plane: beam direction at scan angle
``alpha`` is (0, sin(alpha), -cos(alpha)), so alpha = 0 points straight down
for the default identity mounting. A full revolution is swept; upward beams
simply miss the terrain.

Measurement covariance combines three first-order terms: pose uncertainty
through the 3x6 Jacobian of the hit-point map, scan-angle uncertainty through
its 3x1 Jacobian, and range noise along the beam direction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import OutOfRangeError
from .frames import Pose, PoseCovariance, RigidTransform, rotation_matrix
from .terrain import Terrain, raycast_many

JACOBIAN_STEP = 1e-6


@dataclass(frozen=True)
class LidarModel:
    """Rotating 2D range sensor: mounting, discretization, range gate, noise."""

    mount: RigidTransform = field(default_factory=RigidTransform.identity)
    angular_resolution: float = math.radians(0.5)
    scan_rate: float = 10000.0
    d_min: float = 0.1
    d_max: float = 30.0
    angle_variance: float = math.radians(0.1) ** 2
    range_variance: float = 0.02 ** 2

    def __post_init__(self):
        if not 0.0 < self.d_min < self.d_max:
            raise ValueError("require 0 < d_min < d_max")
        if self.angular_resolution <= 0.0:
            raise ValueError("angular resolution must be positive")
        if self.angle_variance < 0.0 or self.range_variance < 0.0:
            raise ValueError("variances must be non-negative")

    def scan_angles(self) -> np.ndarray:
        """Discrete angles of one revolution."""
        n = int(round(2.0 * math.pi / self.angular_resolution))
        return self.angular_resolution * np.arange(n)


@dataclass(frozen=True)
class SurfaceMeasurement:
    """One registered range return: global hit point, 3x3 covariance, and the
    condensed height variance."""

    point: np.ndarray
    covariance: np.ndarray
    height_variance: float
    alpha: float = 0.0
    distance: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "point",
                           np.asarray(self.point, dtype=np.float64))
        object.__setattr__(self, "covariance",
                           np.asarray(self.covariance, dtype=np.float64))


def beam_directions(alphas) -> np.ndarray:
    """Sensor-frame unit beam directions for scan angles."""
    a = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    return np.column_stack([np.zeros_like(a), np.sin(a), -np.cos(a)])


def _hit_points_from_params(params, lidar: LidarModel, alphas, distances):
    """Global hit points of many beams from one pose parameter vector."""
    sensor_pts = distances[:, None] * beam_directions(alphas)
    inv = lidar.mount.inverse()
    body = sensor_pts @ inv.rotation.T + inv.translation
    r = rotation_matrix(params[3], params[4], params[5])
    return body @ r.T + params[:3]


def hit_point(pose: Pose, lidar: LidarModel, alpha: float,
              d_l: float) -> np.ndarray:
    """Global coordinates of a range return at scan angle ``alpha``."""
    if not lidar.d_min <= d_l <= lidar.d_max:
        raise OutOfRangeError(
            f"distance {d_l} outside [{lidar.d_min}, {lidar.d_max}]")
    return _hit_points_from_params(pose.as_vector(), lidar,
                                   np.array([alpha]),
                                   np.array([d_l]))[0]


def sensor_origin(pose: Pose, lidar: LidarModel) -> np.ndarray:
    return pose.transform_to_world(lidar.mount.inverse().translation)


def world_beam_directions(pose: Pose, lidar: LidarModel, alphas) -> np.ndarray:
    """Global-frame unit beam directions."""
    dirs = beam_directions(alphas) @ lidar.mount.rotation
    return dirs @ pose.rotation().T


def sweep_covariances(pose: Pose, cov: PoseCovariance, lidar: LidarModel,
                      alphas, distances) -> np.ndarray:
    """First-order 3x3 hit-point covariances for a batch of beams.

    Central-difference Jacobians over the six pose coordinates and the scan
    angle; range noise propagates along the global beam direction.
    """
    alphas = np.atleast_1d(np.asarray(alphas, dtype=np.float64))
    distances = np.atleast_1d(np.asarray(distances, dtype=np.float64))
    params = pose.as_vector()
    n = alphas.size
    h = JACOBIAN_STEP

    jac_pose = np.empty((n, 3, 6))
    for c in range(6):
        delta = np.zeros(6)
        delta[c] = h
        hi = _hit_points_from_params(params + delta, lidar, alphas, distances)
        lo = _hit_points_from_params(params - delta, lidar, alphas, distances)
        jac_pose[:, :, c] = (hi - lo) / (2.0 * h)

    hi = _hit_points_from_params(params, lidar, alphas + h, distances)
    lo = _hit_points_from_params(params, lidar, alphas - h, distances)
    jac_alpha = (hi - lo) / (2.0 * h)

    dirs = world_beam_directions(pose, lidar, alphas)

    sigma = np.einsum("nic,cd,njd->nij", jac_pose, cov.matrix, jac_pose)
    sigma += lidar.angle_variance * np.einsum("ni,nj->nij", jac_alpha,
                                              jac_alpha)
    sigma += lidar.range_variance * np.einsum("ni,nj->nij", dirs, dirs)
    return 0.5 * (sigma + np.swapaxes(sigma, 1, 2))


def measurement_covariance(pose: Pose, cov: PoseCovariance,
                           lidar: LidarModel, alpha: float,
                           d_l: float) -> np.ndarray:
    """3x3 covariance of a single hit point."""
    if not lidar.d_min <= d_l <= lidar.d_max:
        raise OutOfRangeError(
            f"distance {d_l} outside [{lidar.d_min}, {lidar.d_max}]")
    return sweep_covariances(pose, cov, lidar, [alpha], [d_l])[0]


def condense_to_height(covariance, sigma_t: float) -> float:
    """Scalar height variance via the slope-statistics vector [s_t, s_t, 1]."""
    v = np.array([sigma_t, sigma_t, 1.0])
    m = np.asarray(covariance, dtype=np.float64)
    return float(v @ m @ v)


def _sample_pose_error(rng, cov: PoseCovariance) -> np.ndarray:
    # eigh-based square root tolerates semidefinite covariances
    w, u = np.linalg.eigh(cov.matrix)
    return u @ (np.sqrt(np.clip(w, 0.0, None)) * rng.normal(size=6))


def scan_sweep(pose: Pose, lidar: LidarModel, terrain: Terrain,
               cov: PoseCovariance, seed: int, sigma_t: float,
               revolutions: int = 1) -> list[SurfaceMeasurement]:
    """Simulate one (or more) sensor revolutions at a frozen pose.

    True ranges are ray-cast from the true ``pose``; the registered hit
    points use an estimated pose drawn once per sweep from ``cov`` plus
    per-beam noise on the scan angle and range. Misses and returns outside
    the range gate are dropped. Deterministic given the seed.
    """
    rng = np.random.default_rng(seed)
    est_pose = Pose.from_vector(pose.as_vector() + _sample_pose_error(rng, cov))

    alphas = np.tile(lidar.scan_angles(), revolutions)
    origin = sensor_origin(pose, lidar)
    dirs = world_beam_directions(pose, lidar, alphas)
    dists = raycast_many(terrain, origin, dirs, lidar.d_max)

    eps_alpha = rng.normal(0.0, math.sqrt(lidar.angle_variance), alphas.size)
    eps_range = rng.normal(0.0, math.sqrt(lidar.range_variance), alphas.size)

    valid = np.isfinite(dists) & (dists >= lidar.d_min)
    alpha_meas = alphas[valid] + eps_alpha[valid]
    d_meas = dists[valid] + eps_range[valid]
    window = (d_meas >= lidar.d_min) & (d_meas <= lidar.d_max)
    alpha_meas, d_meas = alpha_meas[window], d_meas[window]
    if alpha_meas.size == 0:
        return []

    points = _hit_points_from_params(est_pose.as_vector(), lidar,
                                     alpha_meas, d_meas)
    sigmas = sweep_covariances(est_pose, cov, lidar, alpha_meas, d_meas)
    vvec = np.array([sigma_t, sigma_t, 1.0])
    hvar = np.einsum("i,nij,j->n", vvec, sigmas, vvec)
    return [SurfaceMeasurement(points[k], sigmas[k], float(hvar[k]),
                               alpha=float(alpha_meas[k]),
                               distance=float(d_meas[k]))
            for k in range(alpha_meas.size)]


def save_measurement_log(path, measurements) -> None:
    """CSV dump: angle, range, hit point, covariance upper triangle, and the
    condensed height variance."""
    cols = ("alpha,d_l,x,y,z,sigma_xx,sigma_xy,sigma_xz,"
            "sigma_yy,sigma_yz,sigma_zz,sigma2_z")
    with open(path, "w") as fh:
        fh.write(cols + "\n")
        for m in measurements:
            s = m.covariance
            row = [m.alpha, m.distance, m.point[0], m.point[1], m.point[2],
                   s[0, 0], s[0, 1], s[0, 2], s[1, 1], s[1, 2], s[2, 2],
                   m.height_variance]
            fh.write(",".join(repr(float(v)) for v in row) + "\n")
