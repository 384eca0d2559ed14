"""Ground-truth terrain: bilinear heightfield, ray casting, slope statistics,
and reference volume quadrature.

The heightfield stores node values on a regular lattice; the surface between
nodes is the bilinear interpolant. Rays are cast against that surface by
fixed-step marching with bisection refinement, which is what produces the
shadow regions behind steep features.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .errors import DomainError

RAYCAST_TOL = 1e-6  # bisection width, meters along the ray


@dataclass(frozen=True)
class Domain:
    """Axis-aligned region of interest [x_min, x_max] x [y_min, y_max]."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float

    def __post_init__(self):
        if self.x_max <= self.x_min or self.y_max <= self.y_min:
            raise ValueError("domain bounds must be increasing")

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains(self, x, y):
        return ((x >= self.x_min) & (x <= self.x_max)
                & (y >= self.y_min) & (y <= self.y_max))


@dataclass(frozen=True)
class Terrain:
    """Bilinear heightfield on a regular node lattice.

    ``heights[i, j]`` is the height at ``(x0 + i*dx, y0 + j*dy)``.
    """

    heights: np.ndarray
    origin: tuple[float, float]
    spacing: tuple[float, float]

    def __post_init__(self):
        h = np.ascontiguousarray(self.heights, dtype=np.float64)
        if h.ndim != 2 or h.shape[0] < 2 or h.shape[1] < 2:
            raise ValueError("heightfield must be at least 2x2")
        if not np.isfinite(h).all():
            raise ValueError("heightfield contains non-finite values")
        if self.spacing[0] <= 0.0 or self.spacing[1] <= 0.0:
            raise ValueError("lattice spacing must be positive")
        object.__setattr__(self, "heights", h)
        object.__setattr__(self, "origin",
                           (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "spacing",
                           (float(self.spacing[0]), float(self.spacing[1])))

    @property
    def extent(self) -> Domain:
        x0, y0 = self.origin
        dx, dy = self.spacing
        nx, ny = self.heights.shape
        return Domain(x0, x0 + (nx - 1) * dx, y0, y0 + (ny - 1) * dy)

    def height(self, x, y) -> np.ndarray:
        """Bilinear surface height; raises DomainError outside the lattice."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        ext = self.extent
        if not np.all(ext.contains(x, y)):
            raise DomainError("query outside the terrain lattice")
        h = _kernels._bilinear_numpy(self.heights, self.origin[0],
                                     self.origin[1], self.spacing[0],
                                     self.spacing[1], x, y)
        return h if h.ndim else float(h)

    def covers(self, domain: Domain) -> bool:
        ext = self.extent
        return (ext.x_min <= domain.x_min and ext.x_max >= domain.x_max
                and ext.y_min <= domain.y_min and ext.y_max >= domain.y_max)


def raycast(terrain: Terrain, origin, direction, d_max: float,
            step: float | None = None):
    """Distance to the first surface intersection, or None for a miss.

    ``direction`` must be unit length. Marching step defaults to half the
    lattice spacing; the crossing is refined by bisection to RAYCAST_TOL.
    """
    direction = np.asarray(direction, dtype=np.float64)
    if abs(np.linalg.norm(direction) - 1.0) > 1e-9:
        raise ValueError("direction must be a unit vector")
    d = raycast_many(terrain, origin, direction[None, :], d_max, step)[0]
    return None if math.isnan(d) else float(d)


def raycast_many(terrain: Terrain, origin, directions, d_max: float,
                 step: float | None = None) -> np.ndarray:
    """Batch raycast from a common origin; NaN marks a miss."""
    if step is None:
        step = 0.5 * min(terrain.spacing)
    origin = np.asarray(origin, dtype=np.float64)
    dirs = np.ascontiguousarray(directions, dtype=np.float64)
    return _kernels.raycast_heightfield(
        terrain.heights, terrain.origin[0], terrain.origin[1],
        terrain.spacing[0], terrain.spacing[1],
        float(origin[0]), float(origin[1]), float(origin[2]),
        dirs, float(d_max), float(step), RAYCAST_TOL)


def slope_sigma(terrain: Terrain) -> float:
    """Zero-mean normal fit to the pooled central-difference slope sample.

    Pools dh/dx and dh/dy over interior lattice nodes and returns
    sqrt(mean(slope^2)), the MLE scale of a zero-mean normal.
    """
    h = terrain.heights
    dx, dy = terrain.spacing
    slopes = []
    if h.shape[0] >= 3:
        slopes.append(((h[2:, :] - h[:-2, :]) / (2.0 * dx)).ravel())
    if h.shape[1] >= 3:
        slopes.append(((h[:, 2:] - h[:, :-2]) / (2.0 * dy)).ravel())
    if not slopes:
        return 0.0
    pooled = np.concatenate(slopes)
    return float(np.sqrt(np.mean(pooled ** 2)))


def true_volume(terrain: Terrain, domain: Domain, nx: int, ny: int) -> float:
    """Composite midpoint quadrature of the bilinear surface over ``domain``.

    ``nx``/``ny`` set the quadrature resolution; callers wanting ground truth
    against an (N, M) belief grid should use at least (8N, 8M).
    """
    if not terrain.covers(domain):
        raise DomainError("terrain lattice does not cover the domain")
    dx = domain.width / nx
    dy = domain.height / ny
    xs = domain.x_min + (np.arange(nx) + 0.5) * dx
    ys = domain.y_min + (np.arange(ny) + 0.5) * dy
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    h = terrain.height(gx.ravel(), gy.ravel())
    return float(np.sum(h) * dx * dy)


# --------------------------------------------------------------------------
# Synthetic terrain generators (deterministic given their seed).


def flat_terrain(domain: Domain, height: float, nx: int = 2, ny: int = 2,
                 margin: float = 0.0) -> Terrain:
    x0 = domain.x_min - margin
    y0 = domain.y_min - margin
    dx = (domain.width + 2 * margin) / (nx - 1)
    dy = (domain.height + 2 * margin) / (ny - 1)
    return Terrain(np.full((nx, ny), float(height)), (x0, y0), (dx, dy))


def ramp_terrain(domain: Domain, slope_x: float, offset: float = 0.0,
                 nx: int = 3, ny: int = 3, margin: float = 0.0) -> Terrain:
    x0 = domain.x_min - margin
    y0 = domain.y_min - margin
    dx = (domain.width + 2 * margin) / (nx - 1)
    dy = (domain.height + 2 * margin) / (ny - 1)
    xs = x0 + dx * np.arange(nx)
    h = np.repeat((offset + slope_x * xs)[:, None], ny, axis=1)
    return Terrain(h, (x0, y0), (dx, dy))


def bump_terrain(domain: Domain, seed: int, n_bumps: int = 6,
                 amplitude: float = 2.0, width_frac: float = 0.15,
                 base: float = 0.0, nx: int = 96, ny: int = 96,
                 margin: float = 0.0) -> Terrain:
    """Sum of Gaussian bumps with random centers, heights, and widths."""
    rng = np.random.default_rng(seed)
    x0 = domain.x_min - margin
    y0 = domain.y_min - margin
    dx = (domain.width + 2 * margin) / (nx - 1)
    dy = (domain.height + 2 * margin) / (ny - 1)
    xs = x0 + dx * np.arange(nx)
    ys = y0 + dy * np.arange(ny)
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    h = np.full((nx, ny), float(base))
    for _ in range(n_bumps):
        cx = rng.uniform(domain.x_min, domain.x_max)
        cy = rng.uniform(domain.y_min, domain.y_max)
        amp = rng.uniform(0.3, 1.0) * amplitude
        w = rng.uniform(0.6, 1.4) * width_frac * domain.width
        h += amp * np.exp(-((gx - cx) ** 2 + (gy - cy) ** 2) / (2.0 * w * w))
    return Terrain(h, (x0, y0), (dx, dy))


def fractal_terrain(domain: Domain, seed: int, base: float = 5.0,
                    amplitude: float = 2.0, beta: float = 2.2,
                    nx: int = 129, ny: int = 129,
                    margin: float = 0.0) -> Terrain:
    """Spectral-synthesis fractal relief (power spectrum ~ 1/f^beta).

    Produces alpine-looking multiscale roughness; ``base`` sets the mean
    height and ``amplitude`` the peak-to-mean deviation scale.
    """
    rng = np.random.default_rng(seed)
    white = rng.normal(0.0, 1.0, (nx, ny))
    spec = np.fft.rfft2(white)
    fx = np.fft.fftfreq(nx)[:, None]
    fy = np.fft.rfftfreq(ny)[None, :]
    f = np.sqrt(fx ** 2 + fy ** 2)
    f[0, 0] = 1.0
    spec *= f ** (-beta / 2.0)
    spec[0, 0] = 0.0
    rough = np.fft.irfft2(spec, s=(nx, ny))
    rough *= amplitude / max(np.abs(rough).max(), 1e-12)
    x0 = domain.x_min - margin
    y0 = domain.y_min - margin
    dx = (domain.width + 2 * margin) / (nx - 1)
    dy = (domain.height + 2 * margin) / (ny - 1)
    return Terrain(base + rough, (x0, y0), (dx, dy))


def step_terrain(domain: Domain, step_x: float, low: float, high: float,
                 nx: int = 121, ny: int = 5, margin: float = 0.0) -> Terrain:
    """Vertical step at ``x = step_x``: height ``low`` before, ``high`` after."""
    x0 = domain.x_min - margin
    y0 = domain.y_min - margin
    dx = (domain.width + 2 * margin) / (nx - 1)
    dy = (domain.height + 2 * margin) / (ny - 1)
    xs = x0 + dx * np.arange(nx)
    h = np.where(xs >= step_x, float(high), float(low))
    return Terrain(np.repeat(h[:, None], ny, axis=1), (x0, y0), (dx, dy))


# --------------------------------------------------------------------------
# ASCII grid I/O (ESRI-style header; rows ordered from max y down).


def save_ascii_grid(path, terrain: Terrain) -> None:
    nx, ny = terrain.heights.shape
    dx, dy = terrain.spacing
    if abs(dx - dy) > 1e-12 * max(dx, dy):
        raise ValueError("ASCII grid requires square cells")
    with open(path, "w") as fh:
        fh.write(f"ncols {nx}\n")
        fh.write(f"nrows {ny}\n")
        fh.write(f"xllcorner {terrain.origin[0]!r}\n")
        fh.write(f"yllcorner {terrain.origin[1]!r}\n")
        fh.write(f"cellsize {dx!r}\n")
        fh.write("nodata_value -9999\n")
        for j in range(ny - 1, -1, -1):
            fh.write(" ".join(repr(float(v))
                              for v in terrain.heights[:, j]) + "\n")


def load_ascii_grid(path, nodata_fill: float | None = None) -> Terrain:
    header = {}
    values = []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts:
                continue
            if parts[0][0].isalpha():
                header[parts[0].lower()] = parts[1]
            else:
                values.append([float(v) for v in parts])
    try:
        nx = int(header["ncols"])
        ny = int(header["nrows"])
        x0 = float(header["xllcorner"])
        y0 = float(header["yllcorner"])
        cell = float(header["cellsize"])
    except KeyError as exc:
        raise ValueError(f"ASCII grid header missing {exc}") from exc
    nodata = float(header.get("nodata_value", -9999))
    rows = np.asarray(values, dtype=np.float64)
    if rows.shape != (ny, nx):
        raise ValueError(f"expected {ny} rows x {nx} cols, got {rows.shape}")
    heights = rows[::-1, :].T.copy()  # rows start at max y
    mask = heights == nodata
    if mask.any():
        if nodata_fill is None:
            raise ValueError("grid contains nodata cells; pass nodata_fill")
        heights[mask] = nodata_fill
    return Terrain(heights, (x0, y0), (cell, cell))
