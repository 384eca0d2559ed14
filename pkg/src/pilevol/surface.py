"""Height-grid surface belief: truncated Matern GP prediction, per-node
Kalman fusion of height measurements, and the volume estimate.

The belief is a lattice of independent univariate normals (mu, sigma^2) that
double as the inducing observations of a zero-mean GP with unit-amplitude
Matern correlation: grid variances enter the prediction equations as the
per-inducing-point noise. Truncation zeroes the correlation between a
prediction point and inducing points beyond ``gamma * l``, so each query is
solved on its local neighborhood only; the Gram matrix of that neighborhood
uses the exact (positive-definite) Matern correlation.

Distances are horizontal (xy) throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import kv

from . import _kernels
from .errors import DomainError
from .lidar import SurfaceMeasurement
from .terrain import Domain

PRIOR_AMPLITUDE = 1.0
JITTER = 1e-9
VARIANCE_FLOOR = 1e-12

_HALF_INT_CASES = {0.5: 0, 1.5: 1, 2.5: 2}

_blas_controller = None


def _blas_single_thread():
    """Scoped single-thread BLAS: the per-query factorizations are far too
    small for threaded BLAS, whose spin-waits dominate otherwise."""
    global _blas_controller
    if _blas_controller is None:
        import scipy.linalg.cython_lapack  # noqa: F401  (force-load LAPACK)
        from threadpoolctl import ThreadpoolController
        _blas_controller = ThreadpoolController()
    return _blas_controller.limit(limits=1, user_api="blas")


@dataclass(frozen=True)
class KernelConfig:
    """Matern correlation parameters plus the shared slope statistic.

    ``gamma`` is the truncation multiplier (no correlation beyond gamma * l);
    ``sigma_t`` is the terrain slope standard deviation used both to condense
    measurement covariances and to inflate measurement noise with distance;
    ``update_radius_factor`` bounds the Kalman update footprint to
    ``update_radius_factor * l``.
    """

    lengthscale: float
    nu: float = 1.5
    gamma: float = 4.0
    sigma_t: float = 0.0
    update_radius_factor: float = 1.0

    def __post_init__(self):
        if self.lengthscale <= 0.0:
            raise ValueError("lengthscale must be positive")
        if self.nu <= 0.0:
            raise ValueError("nu must be positive")
        if self.gamma < 1.0:
            raise ValueError("gamma must be at least 1")
        if self.sigma_t < 0.0:
            raise ValueError("sigma_t must be non-negative")
        if self.update_radius_factor <= 0.0:
            raise ValueError("update radius factor must be positive")

    @property
    def truncation_radius(self) -> float:
        return self.gamma * self.lengthscale

    @property
    def update_radius(self) -> float:
        return self.update_radius_factor * self.lengthscale


def matern(s, cfg: KernelConfig):
    """Matern correlation at separation ``s``, truncated to 0 beyond gamma*l.

    k(0) = 1 by the analytic limit; half-integer nu uses the closed forms,
    other nu the Bessel-function formula.
    """
    s_arr = np.asarray(s, dtype=np.float64)
    scalar = s_arr.ndim == 0
    s_arr = np.atleast_1d(s_arr)
    if np.any(s_arr < 0.0):
        raise ValueError("separation must be non-negative")
    nu = float(cfg.nu)
    case = _HALF_INT_CASES.get(nu)
    if case is not None:
        k = _kernels.matern_halfint_numpy(s_arr, cfg.lengthscale, case)
    else:
        r = math.sqrt(2.0 * nu) * s_arr / cfg.lengthscale
        with np.errstate(invalid="ignore"):
            k = (r ** nu) * kv(nu, r) / (gamma_fn(nu) * 2.0 ** (nu - 1.0))
        k = np.where(r == 0.0, 1.0, k)
    k = np.where(s_arr > cfg.truncation_radius, 0.0, k)
    return float(k[0]) if scalar else k


@dataclass
class HeightGrid:
    """N x M lattice of cell-center height beliefs over a rectangular domain.

    ``mu[i, j]`` / ``var[i, j]`` describe the cell centered at
    ``(x0 + i*dx, y0 + j*dy)``; the cell base area is dx*dy.
    """

    mu: np.ndarray
    var: np.ndarray
    origin: tuple[float, float]
    spacing: tuple[float, float]

    def __post_init__(self):
        self.mu = np.ascontiguousarray(self.mu, dtype=np.float64)
        self.var = np.ascontiguousarray(self.var, dtype=np.float64)
        if self.mu.shape != self.var.shape or self.mu.ndim != 2:
            raise ValueError("mu and var must be equal-shape 2D arrays")
        if np.any(self.var <= 0.0):
            raise ValueError("prior variances must be strictly positive")
        self.origin = (float(self.origin[0]), float(self.origin[1]))
        self.spacing = (float(self.spacing[0]), float(self.spacing[1]))
        if self.spacing[0] <= 0.0 or self.spacing[1] <= 0.0:
            raise ValueError("spacing must be positive")

    @classmethod
    def create(cls, domain: Domain, nx: int, ny: int, prior_mean: float,
               prior_var: float) -> "HeightGrid":
        dx = domain.width / nx
        dy = domain.height / ny
        origin = (domain.x_min + 0.5 * dx, domain.y_min + 0.5 * dy)
        return cls(np.full((nx, ny), float(prior_mean)),
                   np.full((nx, ny), float(prior_var)),
                   origin, (dx, dy))

    @property
    def shape(self) -> tuple[int, int]:
        return self.mu.shape

    @property
    def cell_area(self) -> float:
        return self.spacing[0] * self.spacing[1]

    @property
    def domain(self) -> Domain:
        nx, ny = self.mu.shape
        x0, y0 = self.origin
        dx, dy = self.spacing
        return Domain(x0 - 0.5 * dx, x0 + (nx - 0.5) * dx,
                      y0 - 0.5 * dy, y0 + (ny - 0.5) * dy)

    def xs(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.mu.shape[0])

    def ys(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.mu.shape[1])

    def node_points(self) -> np.ndarray:
        """(N*M, 2) node coordinates, row-major."""
        gx, gy = np.meshgrid(self.xs(), self.ys(), indexing="ij")
        return np.column_stack([gx.ravel(), gy.ravel()])

    def copy(self) -> "HeightGrid":
        return HeightGrid(self.mu.copy(), self.var.copy(),
                          self.origin, self.spacing)

    def save(self, path) -> None:
        nx, ny = self.mu.shape
        with open(path, "w") as fh:
            fh.write("# height grid snapshot\n")
            fh.write(f"nx {nx}\nny {ny}\n")
            fh.write(f"origin_x {self.origin[0]!r}\n")
            fh.write(f"origin_y {self.origin[1]!r}\n")
            fh.write(f"spacing_x {self.spacing[0]!r}\n")
            fh.write(f"spacing_y {self.spacing[1]!r}\n")
            fh.write(f"cell_area {self.cell_area!r}\n")
            fh.write("# mu\n")
            for i in range(nx):
                fh.write(",".join(repr(float(v)) for v in self.mu[i]) + "\n")
            fh.write("# var\n")
            for i in range(nx):
                fh.write(",".join(repr(float(v)) for v in self.var[i]) + "\n")

    @classmethod
    def load(cls, path) -> "HeightGrid":
        header = {}
        blocks: dict[str, list[list[float]]] = {}
        current = None
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    name = line[1:].strip()
                    if name in ("mu", "var"):
                        current = blocks.setdefault(name, [])
                    continue
                if current is not None:
                    current.append([float(v) for v in line.split(",")])
                else:
                    key, val = line.split()
                    header[key] = val
        return cls(np.asarray(blocks["mu"]), np.asarray(blocks["var"]),
                   (float(header["origin_x"]), float(header["origin_y"])),
                   (float(header["spacing_x"]), float(header["spacing_y"])))


def _query_arrays(queries) -> tuple[np.ndarray, np.ndarray]:
    q = np.asarray(queries, dtype=np.float64).reshape(-1, 2)
    return np.ascontiguousarray(q[:, 0]), np.ascontiguousarray(q[:, 1])


def gp_predict(grid: HeightGrid, cfg: KernelConfig, queries,
               check_domain: bool = True) -> tuple[np.ndarray, np.ndarray]:
    """Posterior height mean and variance at xy query points.

    Each query involves only the inducing nodes within the truncation radius;
    a query isolated from every node returns the prior (mean 0, variance 1).
    """
    qx, qy = _query_arrays(queries)
    if check_domain:
        d = grid.domain
        if not np.all(d.contains(qx, qy)):
            raise DomainError("query outside the belief-grid domain")
    pts = grid.node_points()
    px = np.ascontiguousarray(pts[:, 0])
    py = np.ascontiguousarray(pts[:, 1])
    z = np.ascontiguousarray(grid.mu.ravel())
    nv = np.ascontiguousarray(grid.var.ravel())
    case = _HALF_INT_CASES.get(float(cfg.nu))
    with _blas_single_thread():
        if case is not None:
            means, variances = _kernels.gp_local_moments(
                px, py, z, nv, qx, qy, cfg.lengthscale, case,
                cfg.truncation_radius, JITTER, PRIOR_AMPLITUDE)
        else:
            untruncated = KernelConfig(lengthscale=cfg.lengthscale,
                                       nu=cfg.nu, gamma=np.inf,
                                       sigma_t=cfg.sigma_t)
            means, variances = _kernels.gp_local_moments_generic(
                px, py, z, nv, qx, qy, cfg.truncation_radius, JITTER,
                PRIOR_AMPLITUDE, lambda d: matern(d, untruncated))
    return means, variances


def update_grid(grid: HeightGrid, cfg: KernelConfig,
                m: SurfaceMeasurement) -> HeightGrid:
    """Scalar Kalman update of every node within the update radius.

    The effective measurement variance at horizontal distance s from the hit
    is R(s) = height_variance + sigma_t^2 * (exp(s/l) - 1); the node variance
    updates as (1 - K) * var (floored), the mean toward the hit height.
    """
    out = grid.copy()
    _fuse_arrays(out, cfg,
                 np.array([m.point[0]]), np.array([m.point[1]]),
                 np.array([m.point[2]]), np.array([m.height_variance]))
    return out


def fuse_measurements(grid: HeightGrid, cfg: KernelConfig,
                      measurements) -> HeightGrid:
    """Sequential application of ``update_grid`` over a measurement batch."""
    out = grid.copy()
    if len(measurements):
        hx = np.array([m.point[0] for m in measurements])
        hy = np.array([m.point[1] for m in measurements])
        hz = np.array([m.point[2] for m in measurements])
        hv = np.array([m.height_variance for m in measurements])
        _fuse_arrays(out, cfg, hx, hy, hz, hv)
    return out


def _fuse_arrays(grid: HeightGrid, cfg: KernelConfig, hx, hy, hz, hv) -> None:
    if np.any(hv < 0.0):
        raise ValueError("height variances must be non-negative")
    _kernels.fuse_height_updates(
        grid.mu, grid.var, grid.origin[0], grid.origin[1],
        grid.spacing[0], grid.spacing[1], hx, hy, hz, hv,
        cfg.sigma_t, cfg.lengthscale, cfg.update_radius, VARIANCE_FLOOR)


def volume(grid: HeightGrid, cfg: KernelConfig,
           queries=None) -> tuple[float, float]:
    """Volume estimate (mean, standard deviation) by Riemann summation of the
    GP posterior over the prediction lattice (default: the inducing lattice).
    """
    if queries is None:
        queries = grid.node_points()
    means, variances = gp_predict(grid, cfg, queries, check_domain=False)
    area = grid.cell_area
    mu_v = area * float(means.sum())
    sigma_v = area * math.sqrt(float(variances.sum()))
    return mu_v, sigma_v
