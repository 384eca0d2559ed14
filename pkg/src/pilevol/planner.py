"""Greedy informative waypoint planning and the square-wave benchmark path.

The planner evaluates each candidate by simulating its sweep against a
nominal flat surface at height h0 (which fixes the hypothetical ranges,
ignoring shadows), applying the corresponding Kalman variance updates to a
scratch copy of the belief grid, and scoring the resulting volume-estimate
uncertainty. The candidate with the smallest predicted uncertainty wins;
ties break to the lowest candidate index.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleCandidateError, NoFeasibleCandidateError
from .frames import Pose
from .lidar import (LidarModel, SurfaceMeasurement, sensor_origin,
                    sweep_covariances, world_beam_directions)
from .localization import LocalizationContext
from .surface import HeightGrid, KernelConfig, fuse_measurements, volume
from .terrain import Domain


@dataclass(frozen=True)
class Waypoint:
    """Reference r = (x, y, z, yaw) the low-level controller tracks."""

    x: float
    y: float
    z: float
    yaw: float

    def as_pose(self) -> Pose:
        return Pose(np.array([self.x, self.y, self.z]), yaw=self.yaw)

    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class PlannerConfig:
    """Greedy-step parameters: ball radius, candidate count, fixed z/yaw,
    waypoint budget, and the nominal surface height."""

    step_radius: float
    z: float
    yaw: float
    horizon: int
    h0: float = 0.0
    n_candidates: int = 16
    include_stay: bool = True
    target_ratio: float | None = None

    def __post_init__(self):
        if self.step_radius <= 0.0:
            raise ValueError("step radius must be positive")
        if self.n_candidates < 4:
            raise ValueError("need at least 4 candidates")
        if self.horizon < 0:
            raise ValueError("horizon must be non-negative")


def candidate_waypoints(current: Waypoint, cfg: PlannerConfig) -> list[Waypoint]:
    """Ring of candidates at the step radius, optionally plus staying put."""
    out = []
    for k in range(cfg.n_candidates):
        ang = 2.0 * math.pi * k / cfg.n_candidates
        out.append(Waypoint(current.x + cfg.step_radius * math.cos(ang),
                            current.y + cfg.step_radius * math.sin(ang),
                            cfg.z, cfg.yaw))
    if cfg.include_stay:
        out.append(Waypoint(current.x, current.y, cfg.z, cfg.yaw))
    return out


def hypothetical_sweep(candidate: Waypoint, lidar: LidarModel,
                       cov, h0: float, domain: Domain,
                       sigma_t: float) -> list[SurfaceMeasurement]:
    """Noise-free sweep against the nominal flat surface at height h0.

    Beams that miss the plane, fall outside the range gate, or land outside
    the domain of interest are dropped.
    """
    pose = candidate.as_pose()
    alphas = lidar.scan_angles()
    origin = sensor_origin(pose, lidar)
    dirs = world_beam_directions(pose, lidar, alphas)
    with np.errstate(divide="ignore", invalid="ignore"):
        dists = (h0 - origin[2]) / dirs[:, 2]
    hits_x = origin[0] + dists * dirs[:, 0]
    hits_y = origin[1] + dists * dirs[:, 1]
    ok = (np.isfinite(dists) & (dists >= lidar.d_min)
          & (dists <= lidar.d_max) & domain.contains(hits_x, hits_y))
    if not ok.any():
        return []
    alphas, dists = alphas[ok], dists[ok]
    sigmas = sweep_covariances(pose, cov, lidar, alphas, dists)
    vvec = np.array([sigma_t, sigma_t, 1.0])
    hvar = np.einsum("i,nij,j->n", vvec, sigmas, vvec)
    points = np.column_stack([hits_x[ok], hits_y[ok], np.full(ok.sum(), h0)])
    return [SurfaceMeasurement(points[k], sigmas[k], float(hvar[k]),
                               alpha=float(alphas[k]),
                               distance=float(dists[k]))
            for k in range(alphas.size)]


def predict_step_uncertainty(grid: HeightGrid, cfg: KernelConfig,
                             candidate: Waypoint, lidar: LidarModel,
                             loc: LocalizationContext,
                             h0: float) -> float:
    """Volume-estimate uncertainty after a hypothetical sweep at ``candidate``.

    Deterministic: uses the predicted localization covariance at the
    candidate and the nominal surface; the input grid is not mutated.
    """
    pose = candidate.as_pose()
    if not loc.in_cfree(pose):
        raise InfeasibleCandidateError(
            f"candidate ({candidate.x:.2f}, {candidate.y:.2f}) not in C_free")
    cov = loc.covariance(pose)
    sweep = hypothetical_sweep(candidate, lidar, cov, h0, grid.domain,
                               cfg.sigma_t)
    scratch = fuse_measurements(grid, cfg, sweep)
    return volume(scratch, cfg)[1]


def plan_next_scored(grid: HeightGrid, current: Waypoint,
                     kernel_cfg: KernelConfig, lidar: LidarModel,
                     loc: LocalizationContext, planner_cfg: PlannerConfig,
                     threads: int | None = None) -> tuple[Waypoint, float]:
    """Greedy argmin over the candidate set; returns (waypoint, predicted
    sigma_V). Deterministic tie-break: lowest candidate index wins.

    Candidate evaluations are independent (each owns a scratch grid) and may
    run on a thread pool; scores are aggregated in candidate order, so the
    result does not depend on the thread count.
    """
    candidates = candidate_waypoints(current, planner_cfg)

    def score_of(cand):
        try:
            return predict_step_uncertainty(grid, kernel_cfg, cand, lidar,
                                            loc, planner_cfg.h0)
        except InfeasibleCandidateError:
            return None

    n_workers = os.cpu_count() if threads is None else threads
    if n_workers and n_workers > 1:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            scores = list(pool.map(score_of, candidates))
    else:
        scores = [score_of(c) for c in candidates]

    best = None
    best_score = math.inf
    for cand, score in zip(candidates, scores):
        if score is not None and score < best_score:
            best, best_score = cand, score
    if best is None:
        raise NoFeasibleCandidateError(
            "no candidate within the step ball is in C_free")
    return best, best_score


def plan_next(grid: HeightGrid, current: Waypoint, kernel_cfg: KernelConfig,
              lidar: LidarModel, loc: LocalizationContext,
              planner_cfg: PlannerConfig,
              threads: int | None = None) -> Waypoint:
    return plan_next_scored(grid, current, kernel_cfg, lidar, loc,
                            planner_cfg, threads=threads)[0]


def square_wave_trajectory(domain: Domain, pitch: float, z: float, yaw: float,
                           step: float, bounds=None) -> list[Waypoint]:
    """Boustrophedon sweep of the domain, discretized at the step length.

    Lanes run along x, separated by ``pitch`` in y. Waypoints are the points
    at arclength multiples of ``step`` along the lawnmower polyline, so
    consecutive waypoints are at most ``step`` apart. ``bounds`` optionally
    clamps xy to a feasibility box (lower, upper 2-vectors).
    """
    if pitch <= 0.0 or step <= 0.0:
        raise ValueError("pitch and step must be positive")
    n_lanes = max(int(math.floor(domain.height / pitch)) + 1, 1)
    corners = []
    for lane in range(n_lanes):
        y = min(domain.y_min + lane * pitch, domain.y_max)
        if lane % 2 == 0:
            corners += [(domain.x_min, y), (domain.x_max, y)]
        else:
            corners += [(domain.x_max, y), (domain.x_min, y)]
    pts = [np.asarray(c, dtype=np.float64) for c in corners]

    waypoints = []

    def emit(p):
        x, y = p
        if bounds is not None:
            lo, hi = bounds
            x = min(max(x, lo[0]), hi[0])
            y = min(max(y, lo[1]), hi[1])
        waypoints.append(Waypoint(float(x), float(y), z, yaw))

    emit(pts[0])
    carry = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        seg = b - a
        seg_len = float(np.linalg.norm(seg))
        if seg_len == 0.0:
            continue
        u = seg / seg_len
        t = step - carry
        while t <= seg_len + 1e-12:
            emit(a + t * u)
            t += step
        carry = seg_len - (t - step)
    return waypoints


def lawnmower_length(domain: Domain, pitch: float) -> float:
    """Closed-form path length of the boustrophedon polyline."""
    n_lanes = max(int(math.floor(domain.height / pitch)) + 1, 1)
    lane_gaps = 0.0
    prev_y = domain.y_min
    for lane in range(1, n_lanes):
        y = min(domain.y_min + lane * pitch, domain.y_max)
        lane_gaps += y - prev_y
        prev_y = y
    return n_lanes * domain.width + lane_gaps
