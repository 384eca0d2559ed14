"""End-to-end survey campaign: localize, sweep, fuse, record, plan.

Each waypoint is processed as: simulate feature detections and estimate the
pose (quality bookkeeping and failure handling), ray-cast a LiDAR sweep from
the true pose with registration error drawn from the predicted localization
covariance, fuse the surface measurements into the belief grid, and record
the volume estimate. Greedy mode plans the next waypoint from the updated
grid; square-wave mode follows the benchmark lawnmower.

All randomness flows from per-step substreams of one seed, so campaigns are
bit-reproducible regardless of worker parallelism elsewhere.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import (CampaignAbortedError, ConfigError, ConvergenceError,
                     InfeasibleCandidateError, InsufficientFeaturesError,
                     SingularGeometryError)
from .frames import CameraModel, Pose
from .lidar import LidarModel, scan_sweep
from .localization import (FeasibilityConfig, Feature, FeatureMap,
                           LocalizationContext, estimate_pose,
                           predicted_covariance, quality_of_fix,
                           simulate_detections)
from .planner import (PlannerConfig, Waypoint, plan_next_scored,
                      square_wave_trajectory)
from .surface import HeightGrid, KernelConfig, fuse_measurements, volume
from .terrain import Domain, Terrain, true_volume

MODES = ("greedy", "square_wave")


def feature_wall(axis: str, position: float, span: tuple[float, float],
                 z_range: tuple[float, float], n_span: int,
                 n_z: int) -> FeatureMap:
    """Regular grid of landmarks on a vertical plane (the Fig. 1-style wall).

    ``axis`` names the plane normal: "y" puts the wall at y = position,
    spanning x over ``span``.
    """
    if axis not in ("x", "y"):
        raise ConfigError("wall axis must be 'x' or 'y'")
    us = np.linspace(span[0], span[1], n_span)
    zs = np.linspace(z_range[0], z_range[1], n_z)
    feats = []
    fid = 0
    for z in zs:
        for u in us:
            if axis == "y":
                feats.append(Feature(fid, [u, position, z]))
            else:
                feats.append(Feature(fid, [position, u, z]))
            fid += 1
    return FeatureMap(feats)


@dataclass
class CampaignConfig:
    """Everything a campaign needs, as live objects plus the seed."""

    domain: Domain
    terrain: Terrain
    fmap: FeatureMap
    camera: CameraModel
    lidar: LidarModel
    kernel: KernelConfig
    feasibility: FeasibilityConfig
    planner: PlannerConfig
    start: Waypoint
    seed: int
    grid_nx: int = 20
    grid_ny: int = 20
    prior_mean: float = 0.0
    prior_var: float = 4.0
    square_pitch: float = 2.0
    sweep_revolutions: int = 1
    max_localization_failures: int = 3
    checkpoints: tuple[int, ...] = ()
    truth_refinement: int = 8

    def __post_init__(self):
        if not self.terrain.covers(self.domain):
            raise ConfigError("terrain must cover the domain of interest")
        if self.grid_nx < 1 or self.grid_ny < 1:
            raise ConfigError("belief grid must be non-empty")
        if self.truth_refinement < 8:
            raise ConfigError("truth quadrature refinement must be >= 8")

    def localization_context(self) -> LocalizationContext:
        return LocalizationContext(self.fmap, self.camera, self.feasibility)


@dataclass
class StepRecord:
    step: int
    mu_v: float
    sigma_v: float
    q_pos: float
    rel_err: float
    predicted_sigma_v: float = math.nan


@dataclass
class CampaignReport:
    mode: str
    steps: list[StepRecord]
    trajectory: list[Waypoint]
    true_volume: float
    grid: HeightGrid
    snapshots: dict[int, HeightGrid] = field(default_factory=dict)

    @property
    def final(self) -> StepRecord:
        return self.steps[-1]


def _step_seed(seed: int, step: int, role: int) -> int:
    return int(np.random.SeedSequence((seed, step, role)).generate_state(1)[0])


def run_campaign(cfg: CampaignConfig, mode: str,
                 threads: int | None = None) -> CampaignReport:
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}")
    loc = cfg.localization_context()
    grid = HeightGrid.create(cfg.domain, cfg.grid_nx, cfg.grid_ny,
                             cfg.prior_mean, cfg.prior_var)
    truth = true_volume(cfg.terrain, cfg.domain,
                        cfg.truth_refinement * cfg.grid_nx,
                        cfg.truth_refinement * cfg.grid_ny)
    if truth == 0.0:
        raise ConfigError("true volume is zero; relative errors undefined")

    mu_v, sigma_v = volume(grid, cfg.kernel)
    steps = [StepRecord(0, mu_v, sigma_v, math.nan,
                        abs(mu_v - truth) / abs(truth))]
    trajectory: list[Waypoint] = []
    snapshots: dict[int, HeightGrid] = {}

    square_path: list[Waypoint] = []
    if mode == "square_wave":
        square_path = square_wave_trajectory(
            cfg.domain, cfg.square_pitch, cfg.planner.z, cfg.planner.yaw,
            cfg.planner.step_radius,
            bounds=(cfg.feasibility.lower[:2], cfg.feasibility.upper[:2]))
        if len(square_path) < cfg.planner.horizon:
            raise ConfigError(
                f"square-wave pattern has {len(square_path)} waypoints; "
                f"horizon {cfg.planner.horizon} requires a finer step or "
                f"larger domain")
        square_path = square_path[:cfg.planner.horizon]

    consecutive_failures = 0
    current: Waypoint | None = None
    for k in range(1, cfg.planner.horizon + 1):
        predicted = math.nan
        if mode == "square_wave":
            wp = square_path[k - 1]
        elif current is None:
            wp = cfg.start
        else:
            wp, predicted = plan_next_scored(grid, current, cfg.kernel,
                                             cfg.lidar, loc, cfg.planner,
                                             threads=threads)
        pose = wp.as_pose()
        if not loc.in_cfree(pose):
            raise InfeasibleCandidateError(
                f"waypoint {k} at ({wp.x:.2f}, {wp.y:.2f}) is not in C_free")

        detections = simulate_detections(pose, cfg.fmap, cfg.camera,
                                         _step_seed(cfg.seed, k, 0))
        init = current.as_pose() if current is not None else pose
        q = math.nan
        localized = True
        try:
            _, est_cov = estimate_pose(detections, cfg.fmap, cfg.camera, init,
                                       n_min=cfg.feasibility.n_min)
            q = quality_of_fix(est_cov)
            consecutive_failures = 0
        except (InsufficientFeaturesError, SingularGeometryError,
                ConvergenceError) as exc:
            consecutive_failures += 1
            localized = False
            if consecutive_failures >= cfg.max_localization_failures:
                raise CampaignAbortedError(
                    f"localization failed at {consecutive_failures} "
                    f"consecutive waypoints (last: {exc})") from exc

        if localized:
            sweep_cov = predicted_covariance(pose, cfg.fmap, cfg.camera,
                                             n_min=cfg.feasibility.n_min)
            measurements = scan_sweep(pose, cfg.lidar, cfg.terrain, sweep_cov,
                                      _step_seed(cfg.seed, k, 1),
                                      cfg.kernel.sigma_t,
                                      revolutions=cfg.sweep_revolutions)
            measurements = [m for m in measurements if cfg.domain.contains(
                m.point[0], m.point[1])]
            grid = fuse_measurements(grid, cfg.kernel, measurements)

        mu_v, sigma_v = volume(grid, cfg.kernel)
        steps.append(StepRecord(k, mu_v, sigma_v, q,
                                abs(mu_v - truth) / abs(truth), predicted))
        trajectory.append(wp)
        current = wp
        if k in cfg.checkpoints:
            snapshots[k] = grid.copy()
        if (cfg.planner.target_ratio is not None and mu_v != 0.0
                and sigma_v / abs(mu_v) < cfg.planner.target_ratio):
            break

    return CampaignReport(mode, steps, trajectory, truth, grid, snapshots)


# --------------------------------------------------------------------------
# Report emission. Floats are written with repr (shortest round-trip), which
# makes re-runs bit-comparable.


def _fmt(v: float) -> str:
    return "" if (isinstance(v, float) and math.isnan(v)) else repr(float(v))


def write_report(report: CampaignReport, out_dir, manifest_config: dict,
                 seed: int) -> dict:
    """Write manifest, time series, trajectory, and grid snapshots.

    Returns the manifest dict that was written.
    """
    os.makedirs(out_dir, exist_ok=True)

    ts_path = os.path.join(out_dir, "timeseries.csv")
    with open(ts_path, "w") as fh:
        fh.write("step,mu_v,sigma_v,q_pos,rel_err\n")
        for s in report.steps:
            fh.write(f"{s.step},{_fmt(s.mu_v)},{_fmt(s.sigma_v)},"
                     f"{_fmt(s.q_pos)},{_fmt(s.rel_err)}\n")

    traj_path = os.path.join(out_dir, "trajectory.csv")
    with open(traj_path, "w") as fh:
        fh.write("index,x,y,z,yaw,predicted_sigma_v,sigma_v,mu_v\n")
        for i, wp in enumerate(report.trajectory):
            s = report.steps[i + 1]
            fh.write(f"{i},{_fmt(wp.x)},{_fmt(wp.y)},{_fmt(wp.z)},"
                     f"{_fmt(wp.yaw)},{_fmt(s.predicted_sigma_v)},"
                     f"{_fmt(s.sigma_v)},{_fmt(s.mu_v)}\n")

    grid_path = os.path.join(out_dir, "grid_final.csv")
    report.grid.save(grid_path)
    snapshot_files = {}
    for step, snap in sorted(report.snapshots.items()):
        p = os.path.join(out_dir, f"grid_step{step:04d}.csv")
        snap.save(p)
        snapshot_files[str(step)] = os.path.basename(p)

    final = report.final
    manifest = {
        "config": manifest_config,
        "mode": report.mode,
        "seed": seed,
        "backend": _kernels.BACKEND,
        "results": {
            "steps": len(report.trajectory),
            "mu_v": final.mu_v,
            "sigma_v": final.sigma_v,
            "true_volume": report.true_volume,
            "rel_err": final.rel_err,
            "sigma_over_mu": (final.sigma_v / abs(final.mu_v)
                              if final.mu_v else math.inf),
        },
        "files": {
            "timeseries": os.path.basename(ts_path),
            "trajectory": os.path.basename(traj_path),
            "grid_final": os.path.basename(grid_path),
            "snapshots": snapshot_files,
        },
    }
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest
