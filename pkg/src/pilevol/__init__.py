"""Drone-based stockpile volume estimation.

Simulates a quadrotor surveying a pile of bulk material: camera-based
localization against mapped features, 2D-LiDAR sweeps with first-order
uncertainty propagation, a sparse Matern GP height-grid belief fused by
Kalman updates, and greedy waypoint planning that minimizes the
volume-estimate uncertainty.
"""

from ._kernels import BACKEND
from .campaign import (CampaignConfig, CampaignReport, feature_wall,
                       run_campaign, write_report)
from .frames import (CameraModel, Pose, PoseCovariance, RigidTransform,
                     down_camera_mount, front_camera_mount, numeric_jacobian,
                     project, world_to_camera)
from .lidar import (LidarModel, SurfaceMeasurement, condense_to_height,
                    hit_point, measurement_covariance, scan_sweep)
from .localization import (DetectionSet, FeasibilityConfig, Feature,
                           FeatureMap, LatticeSpec, LocalizationContext,
                           estimate_pose, in_cfree, predicted_covariance,
                           quality_map, quality_of_fix, simulate_detections)
from .planner import (PlannerConfig, Waypoint, plan_next, plan_next_scored,
                      predict_step_uncertainty, square_wave_trajectory)
from .surface import (HeightGrid, KernelConfig, fuse_measurements, gp_predict,
                      matern, update_grid, volume)
from .terrain import (Domain, Terrain, fractal_terrain, raycast, slope_sigma,
                      true_volume)

__version__ = "0.1.0"
