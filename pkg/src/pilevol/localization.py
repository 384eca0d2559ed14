"""Camera-based localization against mapped features.

Pose and covariance come from a nonlinear least-squares fit of reprojection
errors; the covariance of the estimate is sigma^2 (J^T J)^-1 with J the
stacked reprojection Jacobian and sigma the image-plane noise. The same
machinery evaluated with noise-free projections gives the predicted
covariance field, the quality-of-fix metric, and the feasible set.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import (ConvergenceError, InsufficientFeaturesError,
                     InvalidCovarianceError, SingularGeometryError)
from .frames import (CameraModel, Pose, PoseCovariance, numeric_jacobian,
                     rotation_matrix)

MAX_CONDITION = 1e12
LM_MAX_ITER = 100
LM_STEP_TOL = 1e-10
LM_COST_TOL = 1e-12


@dataclass(frozen=True)
class Feature:
    """A mapped landmark: integer id plus global-frame position."""

    id: int
    position: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "position",
                           np.array(self.position, dtype=np.float64))


class FeatureMap:
    """Set of identified landmarks with unique integer ids."""

    def __init__(self, features):
        features = list(features)
        ids = [int(f.id) for f in features]
        if len(set(ids)) != len(ids):
            raise ValueError("feature ids must be unique")
        self.ids = np.asarray(ids, dtype=np.int64)
        self.positions = (np.vstack([f.position for f in features])
                          if features else np.zeros((0, 3)))

    def __len__(self):
        return self.ids.size

    def positions_for(self, ids) -> np.ndarray:
        index = {int(i): k for k, i in enumerate(self.ids)}
        try:
            rows = [index[int(i)] for i in ids]
        except KeyError as exc:
            raise KeyError(f"feature id {exc} not in map") from exc
        return self.positions[rows]

    def translated(self, offset) -> "FeatureMap":
        off = np.asarray(offset, dtype=np.float64)
        return FeatureMap(Feature(int(i), p + off)
                          for i, p in zip(self.ids, self.positions))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("# feature map; units=meters; frame=global\n")
            fh.write("id,x,y,z\n")
            for i, p in zip(self.ids, self.positions):
                fh.write(f"{int(i)},{float(p[0])!r},{float(p[1])!r},"
                         f"{float(p[2])!r}\n")

    @classmethod
    def load(cls, path) -> "FeatureMap":
        feats = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line or line.startswith("#") or line.startswith("id"):
                    continue
                i, x, y, z = line.split(",")
                feats.append(Feature(int(i), [float(x), float(y), float(z)]))
        return cls(feats)


@dataclass(frozen=True)
class DetectionSet:
    """Pixel detections of identified features: parallel id/pixel arrays."""

    ids: np.ndarray
    pixels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "ids",
                           np.asarray(self.ids, dtype=np.int64))
        px = np.asarray(self.pixels, dtype=np.float64).reshape(-1, 2)
        object.__setattr__(self, "pixels", px)
        if self.ids.size != px.shape[0]:
            raise ValueError("ids and pixels must have equal length")

    def __len__(self):
        return self.ids.size

    @classmethod
    def empty(cls) -> "DetectionSet":
        return cls(np.zeros(0, dtype=np.int64), np.zeros((0, 2)))


@dataclass(frozen=True)
class FeasibilityConfig:
    """Feasible-set definition: quality threshold, visibility floor, C bounds."""

    tau: float
    n_min: int = 4
    lower: np.ndarray = field(default_factory=lambda: np.array(
        [-np.inf, -np.inf, -np.inf]))
    upper: np.ndarray = field(default_factory=lambda: np.array(
        [np.inf, np.inf, np.inf]))
    yaw_min: float = 0.0
    yaw_max: float = 2.0 * math.pi

    def __post_init__(self):
        object.__setattr__(self, "lower",
                           np.asarray(self.lower, dtype=np.float64))
        object.__setattr__(self, "upper",
                           np.asarray(self.upper, dtype=np.float64))
        if self.tau < 0.0:
            raise ValueError("tau must be non-negative")
        if self.n_min < 3:
            raise ValueError("n_min must be at least 3")

    def contains(self, pose: Pose) -> bool:
        if np.any(pose.position < self.lower) or np.any(
                pose.position > self.upper):
            return False
        return self.yaw_min <= pose.yaw <= self.yaw_max


def _project_features(params, positions, camera):
    """Pixels and camera-frame depths of ``positions`` seen from pose params.

    Vectorized over features; depths <= 0 mean behind the camera (the pixel
    row is then meaningless).
    """
    r = rotation_matrix(params[3], params[4], params[5])
    body = (positions - params[:3]) @ r
    cam = body @ camera.mount.rotation.T + camera.mount.translation
    z = cam[:, 2]
    safe = np.where(z > 0.0, z, 1.0)
    uv = np.column_stack([camera.fx * cam[:, 0] / safe + camera.cx,
                          camera.fy * cam[:, 1] / safe + camera.cy])
    return uv, z


def visible_features(pose: Pose, fmap: FeatureMap, camera: CameraModel):
    """Ids and noise-free pixels of features in front of the camera and
    inside the image bounds."""
    if len(fmap) == 0:
        return np.zeros(0, dtype=np.int64), np.zeros((0, 2))
    uv, z = _project_features(pose.as_vector(), fmap.positions, camera)
    ok = ((z > 0.0)
          & (uv[:, 0] >= 0.0) & (uv[:, 0] <= camera.width)
          & (uv[:, 1] >= 0.0) & (uv[:, 1] <= camera.height))
    return fmap.ids[ok], uv[ok]


def simulate_detections(pose: Pose, fmap: FeatureMap, camera: CameraModel,
                        noise_seed: int,
                        occlusion_terrain=None) -> DetectionSet:
    """Noisy pixel detections of all visible features; deterministic per seed.

    Pixel noise is isotropic Gaussian with the camera's noise sigma; noisy
    detections that drift outside the image bounds are dropped, as are
    features occluded by ``occlusion_terrain`` when one is supplied.
    """
    ids, uv = visible_features(pose, fmap, camera)
    if occlusion_terrain is not None and ids.size:
        from .terrain import raycast
        keep = []
        cam_origin = pose.transform_to_world(
            camera.mount.inverse().translation)
        for k, fid in enumerate(ids):
            target = fmap.positions_for([fid])[0]
            delta = target - cam_origin
            dist = float(np.linalg.norm(delta))
            hit = raycast(occlusion_terrain, cam_origin, delta / dist,
                          dist - 1e-6)
            keep.append(hit is None)
        ids, uv = ids[keep], uv[keep]
    rng = np.random.default_rng(noise_seed)
    noisy = uv + rng.normal(0.0, camera.pixel_noise, uv.shape)
    ok = ((noisy[:, 0] >= 0.0) & (noisy[:, 0] <= camera.width)
          & (noisy[:, 1] >= 0.0) & (noisy[:, 1] <= camera.height))
    return DetectionSet(ids[ok], noisy[ok])


def _stacked_jacobian(params, positions, camera):
    def fn(p):
        uv, _ = _project_features(p, positions, camera)
        return uv.ravel()

    return numeric_jacobian(fn, params)


def _covariance_from_jacobian(jac, sigma) -> PoseCovariance:
    jtj = jac.T @ jac
    if np.linalg.cond(jtj) > MAX_CONDITION:
        raise SingularGeometryError(
            "degenerate feature configuration (J^T J ill-conditioned)")
    cov = sigma * sigma * np.linalg.inv(jtj)
    return PoseCovariance(0.5 * (cov + cov.T))


def estimate_pose(detections: DetectionSet, fmap: FeatureMap,
                  camera: CameraModel, initial_guess: Pose,
                  n_min: int = 4) -> tuple[Pose, PoseCovariance]:
    """Levenberg-Marquardt fit of the pose to the observed reprojections.

    Returns the local minimizer of the summed squared reprojection errors and
    its covariance sigma^2 (J^T J)^-1 evaluated at the solution.
    """
    if len(detections) < n_min:
        raise InsufficientFeaturesError(
            f"{len(detections)} detections < n_min={n_min}")
    positions = fmap.positions_for(detections.ids)
    observed = detections.pixels.ravel()

    def residuals(p):
        uv, z = _project_features(p, positions, camera)
        if np.any(z <= 0.0):
            return None
        return uv.ravel() - observed

    params = initial_guess.as_vector()
    res = residuals(params)
    if res is None:
        raise ConvergenceError("initial guess places features behind camera")
    cost = float(res @ res)

    jac = _stacked_jacobian(params, positions, camera)
    if np.linalg.cond(jac.T @ jac) > MAX_CONDITION:
        raise SingularGeometryError(
            "degenerate feature configuration (J^T J ill-conditioned)")

    lam = 1e-3
    converged = False
    for _ in range(LM_MAX_ITER):
        jtj = jac.T @ jac
        grad = jac.T @ res
        damped = jtj + lam * np.diag(np.diag(jtj).clip(min=1e-12))
        try:
            step = np.linalg.solve(damped, -grad)
        except np.linalg.LinAlgError as exc:
            raise SingularGeometryError("normal equations singular") from exc
        if np.linalg.norm(step) < LM_STEP_TOL:
            converged = True
            break
        trial = params + step
        trial_res = residuals(trial)
        trial_cost = math.inf if trial_res is None else float(
            trial_res @ trial_res)
        if trial_cost < cost:
            params, res = trial, trial_res
            improvement = cost - trial_cost
            cost = trial_cost
            lam = max(lam / 3.0, 1e-12)
            jac = _stacked_jacobian(params, positions, camera)
            if improvement <= LM_COST_TOL * max(cost, 1e-300):
                converged = True
                break
        else:
            lam *= 2.0
            if lam > 1e12:
                break
    if not converged:
        raise ConvergenceError(
            f"Levenberg-Marquardt did not converge in {LM_MAX_ITER} iterations")
    cov = _covariance_from_jacobian(jac, camera.pixel_noise)
    return Pose.from_vector(params), cov


def quality_of_fix(cov: PoseCovariance, weights=None) -> float:
    """Scalar fix quality 1/sqrt(trace of the covariance).

    ``weights`` optionally rescales the diagonal before the trace, for mixing
    meter^2 and radian^2 terms; default is the plain unweighted trace.
    """
    diag = np.diag(cov.matrix)
    if weights is not None:
        diag = diag * np.asarray(weights, dtype=np.float64)
    trace = float(diag.sum())
    if trace <= 0.0:
        raise InvalidCovarianceError("covariance trace must be positive")
    return 1.0 / math.sqrt(trace)


def predicted_covariance(pose: Pose, fmap: FeatureMap, camera: CameraModel,
                         n_min: int = 4) -> PoseCovariance:
    """Covariance the estimator would report at ``pose``: sigma^2 (J^T J)^-1
    with noise-free projections of all visible features."""
    ids, _ = visible_features(pose, fmap, camera)
    if ids.size < n_min:
        raise InsufficientFeaturesError(
            f"{ids.size} visible features < n_min={n_min}")
    positions = fmap.positions_for(ids)
    jac = _stacked_jacobian(pose.as_vector(), positions, camera)
    return _covariance_from_jacobian(jac, camera.pixel_noise)


def in_cfree(pose: Pose, fmap: FeatureMap, camera: CameraModel,
             cfg: FeasibilityConfig) -> bool:
    """Membership in the feasible set: inside C bounds, enough visible
    features, and predicted quality of fix above the threshold."""
    if not cfg.contains(pose):
        return False
    try:
        cov = predicted_covariance(pose, fmap, camera, n_min=cfg.n_min)
    except (InsufficientFeaturesError, SingularGeometryError):
        return False
    return quality_of_fix(cov) > cfg.tau


@dataclass(frozen=True)
class LatticeSpec:
    """Regular xy evaluation lattice."""

    x_min: float
    x_max: float
    nx: int
    y_min: float
    y_max: float
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError("lattice must be non-empty")

    def xs(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.nx)

    def ys(self) -> np.ndarray:
        return np.linspace(self.y_min, self.y_max, self.ny)


def quality_map(fmap: FeatureMap, camera: CameraModel, z: float, yaw: float,
                lattice: LatticeSpec, n_min: int = 4,
                threads: int | None = None) -> np.ndarray:
    """Quality of fix over an xy lattice at fixed altitude and yaw.

    Returns an (ny, nx) field; NaN marks infeasible points (too few visible
    features or degenerate geometry). Rows are evaluated concurrently; the
    result does not depend on the thread count.
    """
    xs, ys = lattice.xs(), lattice.ys()

    def eval_row(iy):
        row = np.full(lattice.nx, np.nan)
        for ix, x in enumerate(xs):
            pose = Pose(np.array([x, ys[iy], z]), yaw=yaw)
            try:
                row[ix] = quality_of_fix(
                    predicted_covariance(pose, fmap, camera, n_min=n_min))
            except (InsufficientFeaturesError, SingularGeometryError):
                pass
        return row

    field_ = np.empty((lattice.ny, lattice.nx))
    if threads is not None and threads <= 1:
        for iy in range(lattice.ny):
            field_[iy] = eval_row(iy)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            for iy, row in enumerate(pool.map(eval_row, range(lattice.ny))):
                field_[iy] = row
    return field_


def save_quality_map(path, lattice: LatticeSpec, field_: np.ndarray) -> None:
    """CSV lattice, header row with x coordinates, first column y; infeasible
    cells are left empty."""
    xs, ys = lattice.xs(), lattice.ys()
    with open(path, "w") as fh:
        fh.write("y\\x," + ",".join(repr(float(x)) for x in xs) + "\n")
        for iy, y in enumerate(ys):
            cells = ["" if math.isnan(v) else repr(float(v))
                     for v in field_[iy]]
            fh.write(repr(float(y)) + "," + ",".join(cells) + "\n")


@dataclass(frozen=True)
class LocalizationContext:
    """Bundle of map, camera, and feasibility config used by the planner."""

    fmap: FeatureMap
    camera: CameraModel
    feasibility: FeasibilityConfig

    def covariance(self, pose: Pose) -> PoseCovariance:
        return predicted_covariance(pose, self.fmap, self.camera,
                                    n_min=self.feasibility.n_min)

    def quality(self, pose: Pose) -> float:
        return quality_of_fix(self.covariance(pose))

    def in_cfree(self, pose: Pose) -> bool:
        return in_cfree(pose, self.fmap, self.camera, self.feasibility)
