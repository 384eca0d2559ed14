"""Hot numeric kernels with two interchangeable backends.

Each kernel exists twice: a numba ``@njit`` version (``*_numba``) and a pure
numpy version (``*_numpy``). The public aliases at the bottom of this module
bind to one backend at import time:

* default: numba, when importable;
* ``PILEVOL_PURE_NUMPY=1`` in the environment forces the numpy path.

Both variants implement the same arithmetic in the same order; they agree to
floating-point roundoff (see tests/test_kernels.py and benchmarks/).
"""

from __future__ import annotations

import math
import os

import numpy as np

_flag = os.environ.get("PILEVOL_PURE_NUMPY", "0").strip().lower()
PURE_NUMPY_REQUESTED = _flag in {"1", "true", "yes", "on"}

try:
    from numba import njit

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - exercised only without numba
    NUMBA_AVAILABLE = False

BACKEND = "numpy" if (PURE_NUMPY_REQUESTED or not NUMBA_AVAILABLE) else "numba"


# --------------------------------------------------------------------------
# Matern correlation, half-integer closed forms.
# nu_case: 0 -> nu=1/2, 1 -> nu=3/2, 2 -> nu=5/2.

_SQRT3 = math.sqrt(3.0)
_SQRT5 = math.sqrt(5.0)


def matern_halfint_numpy(d, lengthscale, nu_case):
    """Vectorized Matern correlation at distance d, no truncation applied."""
    r = np.asarray(d, dtype=np.float64) / lengthscale
    if nu_case == 0:
        return np.exp(-r)
    if nu_case == 1:
        t = _SQRT3 * r
        return (1.0 + t) * np.exp(-t)
    if nu_case == 2:
        t = _SQRT5 * r
        return (1.0 + t + t * t / 3.0) * np.exp(-t)
    raise ValueError(f"unsupported nu_case {nu_case}")


def _gp_local_moments_impl(px, py, z, noise_var, qx, qy, lengthscale,
                           nu_case, radius, jitter, prior_amp, kernel_fn):
    """Numpy local-neighborhood GP prediction; ``kernel_fn(d) -> correlation``."""
    from scipy.linalg import solve_triangular

    # one shared inducing set: build the full Gram once, gather per query
    dfull = np.sqrt((px[:, None] - px[None, :]) ** 2
                    + (py[:, None] - py[None, :]) ** 2)
    k_full = prior_amp * kernel_fn(dfull)

    nq = qx.shape[0]
    means = np.zeros(nq)
    variances = np.empty(nq)
    r2 = radius * radius
    for q in range(nq):
        dx = px - qx[q]
        dy = py - qy[q]
        sel = np.flatnonzero(dx * dx + dy * dy <= r2)
        m = sel.size
        if m == 0:
            variances[q] = prior_amp
            continue
        K = k_full[np.ix_(sel, sel)].copy()
        K[np.diag_indices(m)] += noise_var[sel] + jitter
        kstar = prior_amp * kernel_fn(np.sqrt(dx[sel] ** 2 + dy[sel] ** 2))
        L = _chol_with_retry_numpy(K, jitter)
        y = solve_triangular(L, kstar, lower=True)
        w = solve_triangular(L, z[sel], lower=True)
        means[q] = y @ w
        variances[q] = max(prior_amp - y @ y, 0.0)
    return means, variances


def _chol_with_retry_numpy(K, jitter):
    # untruncated Matern Grams are PD; retries guard pathological inputs
    for attempt in range(3):
        try:
            return np.linalg.cholesky(K)
        except np.linalg.LinAlgError:
            K[np.diag_indices(K.shape[0])] += jitter * 1000.0 ** (attempt + 1)
    return np.linalg.cholesky(K)


def gp_local_moments_numpy(px, py, z, noise_var, qx, qy, lengthscale,
                           nu_case, radius, jitter, prior_amp):
    """Posterior (mean, variance) per query from inducing points within radius."""
    def kernel_fn(d):
        return matern_halfint_numpy(d, lengthscale, nu_case)

    return _gp_local_moments_impl(px, py, z, noise_var, qx, qy, lengthscale,
                                  nu_case, radius, jitter, prior_amp, kernel_fn)


def gp_local_moments_generic(px, py, z, noise_var, qx, qy, radius, jitter,
                             prior_amp, kernel_fn):
    """Numpy-only variant accepting an arbitrary kernel callable (any nu)."""
    return _gp_local_moments_impl(px, py, z, noise_var, qx, qy, 0.0,
                                  -1, radius, jitter, prior_amp, kernel_fn)


# --------------------------------------------------------------------------
# Sequential Kalman fusion of height measurements into the grid belief.
# mu/var are (nx, ny) node arrays updated in place; nodes with horizontal
# distance s <= radius from a hit receive the update with measurement
# variance inflated by sigma_t^2 * (exp(s/l) - 1).


def fuse_height_updates_numpy(mu, var, x0, y0, dx, dy, hx, hy, hz, hvar,
                              sigma_t, lengthscale, radius, var_floor):
    nx, ny = mu.shape
    st2 = sigma_t * sigma_t
    for k in range(hx.shape[0]):
        i_lo = max(int(math.ceil((hx[k] - radius - x0) / dx)), 0)
        i_hi = min(int(math.floor((hx[k] + radius - x0) / dx)), nx - 1)
        j_lo = max(int(math.ceil((hy[k] - radius - y0) / dy)), 0)
        j_hi = min(int(math.floor((hy[k] + radius - y0) / dy)), ny - 1)
        if i_lo > i_hi or j_lo > j_hi:
            continue
        xs = x0 + dx * np.arange(i_lo, i_hi + 1)
        ys = y0 + dy * np.arange(j_lo, j_hi + 1)
        s = np.sqrt((xs[:, None] - hx[k]) ** 2 + (ys[None, :] - hy[k]) ** 2)
        inside = s <= radius
        if not inside.any():
            continue
        window_mu = mu[i_lo:i_hi + 1, j_lo:j_hi + 1]
        window_var = var[i_lo:i_hi + 1, j_lo:j_hi + 1]
        r = hvar[k] + st2 * np.expm1(s / lengthscale)
        gain = np.where(inside, window_var / (window_var + r), 0.0)
        window_mu[...] = (1.0 - gain) * window_mu + gain * hz[k]
        window_var[...] = np.maximum((1.0 - gain) * window_var, var_floor)


# --------------------------------------------------------------------------
# Ray marching against a bilinear heightfield: fixed-step march, bisection
# refinement of the first crossing. Returns hit distance per ray, NaN = miss.
# Points outside the lattice extent are treated as bottomless (no surface).


def _bilinear_numpy(heights, x0, y0, dx, dy, x, y):
    nx, ny = heights.shape
    u = (x - x0) / dx
    v = (y - y0) / dy
    outside = (u < 0.0) | (u > nx - 1.0) | (v < 0.0) | (v > ny - 1.0)
    iu = np.clip(np.floor(u).astype(np.int64), 0, nx - 2)
    iv = np.clip(np.floor(v).astype(np.int64), 0, ny - 2)
    fu = u - iu
    fv = v - iv
    h = ((1.0 - fu) * (1.0 - fv) * heights[iu, iv]
         + fu * (1.0 - fv) * heights[iu + 1, iv]
         + (1.0 - fu) * fv * heights[iu, iv + 1]
         + fu * fv * heights[iu + 1, iv + 1])
    return np.where(outside, -1e300, h)


def raycast_heightfield_numpy(heights, x0, y0, dx, dy, ox, oy, oz,
                              dirs, d_max, step, tol):
    n_rays = dirs.shape[0]
    out = np.full(n_rays, np.nan)
    n_steps = int(math.ceil(d_max / step))
    ts = np.minimum(step * np.arange(1, n_steps + 1), d_max)
    for k in range(n_rays):
        ux, uy, uz = dirs[k]
        f0 = oz - _bilinear_numpy(heights, x0, y0, dx, dy,
                                  np.asarray(ox), np.asarray(oy))
        if f0 <= 0.0:
            out[k] = 0.0
            continue
        f = (oz + ts * uz) - _bilinear_numpy(heights, x0, y0, dx, dy,
                                             ox + ts * ux, oy + ts * uy)
        below = f <= 0.0
        if not below.any():
            continue
        i = int(np.argmax(below))
        t_lo = 0.0 if i == 0 else ts[i - 1]
        t_hi = ts[i]
        while t_hi - t_lo > tol:
            t_mid = 0.5 * (t_lo + t_hi)
            h = _bilinear_numpy(heights, x0, y0, dx, dy,
                                np.asarray(ox + t_mid * ux),
                                np.asarray(oy + t_mid * uy))
            if (oz + t_mid * uz) - h <= 0.0:
                t_hi = t_mid
            else:
                t_lo = t_mid
        out[k] = t_hi
    return out


# --------------------------------------------------------------------------
# Numba variants. Same arithmetic, scalar loops.

if NUMBA_AVAILABLE:

    @njit(cache=True, nogil=True)
    def _matern_scalar(d, lengthscale, nu_case):
        r = d / lengthscale
        if nu_case == 0:
            return math.exp(-r)
        if nu_case == 1:
            t = _SQRT3 * r
            return (1.0 + t) * math.exp(-t)
        t = _SQRT5 * r
        return (1.0 + t + t * t / 3.0) * math.exp(-t)

    @njit(cache=True, nogil=True)
    def matern_halfint_numba(d, lengthscale, nu_case):
        out = np.empty(d.shape[0])
        for i in range(d.shape[0]):
            out[i] = _matern_scalar(d[i], lengthscale, nu_case)
        return out

    @njit(cache=True, nogil=True)
    def _forward_subst(L, b):
        n = b.shape[0]
        y = np.empty(n)
        for i in range(n):
            s = b[i]
            for j in range(i):
                s -= L[i, j] * y[j]
            y[i] = s / L[i, i]
        return y

    @njit(cache=True, nogil=True)
    def gp_local_moments_numba(px, py, z, noise_var, qx, qy, lengthscale,
                               nu_case, radius, jitter, prior_amp):
        nq = qx.shape[0]
        n = px.shape[0]
        # one shared inducing set: build the full Gram once, gather per query
        k_full = np.empty((n, n))
        for i in range(n):
            k_full[i, i] = prior_amp
            for j in range(i + 1, n):
                d = math.sqrt((px[i] - px[j]) ** 2 + (py[i] - py[j]) ** 2)
                kv = prior_amp * _matern_scalar(d, lengthscale, nu_case)
                k_full[i, j] = kv
                k_full[j, i] = kv
        means = np.zeros(nq)
        variances = np.empty(nq)
        idx = np.empty(n, np.int64)
        r2 = radius * radius
        for q in range(nq):
            m = 0
            for i in range(n):
                ddx = px[i] - qx[q]
                ddy = py[i] - qy[q]
                if ddx * ddx + ddy * ddy <= r2:
                    idx[m] = i
                    m += 1
            if m == 0:
                variances[q] = prior_amp
                continue
            K = np.empty((m, m))
            kstar = np.empty(m)
            zloc = np.empty(m)
            for a in range(m):
                ia = idx[a]
                for b in range(m):
                    K[a, b] = k_full[ia, idx[b]]
                K[a, a] += noise_var[ia] + jitter
                d = math.sqrt((px[ia] - qx[q]) ** 2 + (py[ia] - qy[q]) ** 2)
                kstar[a] = prior_amp * _matern_scalar(d, lengthscale, nu_case)
                zloc[a] = z[ia]
            ok = False
            L = np.empty((m, m))
            for attempt in range(3):
                try:
                    L = np.linalg.cholesky(K)
                    ok = True
                    break
                except Exception:
                    extra = jitter * 1000.0 ** (attempt + 1)
                    for a in range(m):
                        K[a, a] += extra
            if not ok:
                L = np.linalg.cholesky(K)
            y = _forward_subst(L, kstar)
            w = _forward_subst(L, zloc)
            mean = 0.0
            yty = 0.0
            for a in range(m):
                mean += y[a] * w[a]
                yty += y[a] * y[a]
            means[q] = mean
            v = prior_amp - yty
            variances[q] = v if v > 0.0 else 0.0
        return means, variances

    @njit(cache=True, nogil=True)
    def fuse_height_updates_numba(mu, var, x0, y0, dx, dy, hx, hy, hz, hvar,
                                  sigma_t, lengthscale, radius, var_floor):
        nx, ny = mu.shape
        st2 = sigma_t * sigma_t
        for k in range(hx.shape[0]):
            i_lo = max(int(math.ceil((hx[k] - radius - x0) / dx)), 0)
            i_hi = min(int(math.floor((hx[k] + radius - x0) / dx)), nx - 1)
            j_lo = max(int(math.ceil((hy[k] - radius - y0) / dy)), 0)
            j_hi = min(int(math.floor((hy[k] + radius - y0) / dy)), ny - 1)
            for i in range(i_lo, i_hi + 1):
                xi = x0 + dx * i
                for j in range(j_lo, j_hi + 1):
                    yj = y0 + dy * j
                    s = math.sqrt((xi - hx[k]) ** 2 + (yj - hy[k]) ** 2)
                    if s > radius:
                        continue
                    r = hvar[k] + st2 * math.expm1(s / lengthscale)
                    gain = var[i, j] / (var[i, j] + r)
                    mu[i, j] = (1.0 - gain) * mu[i, j] + gain * hz[k]
                    v = (1.0 - gain) * var[i, j]
                    var[i, j] = v if v > var_floor else var_floor

    @njit(cache=True, nogil=True)
    def _bilinear_scalar(heights, x0, y0, dx, dy, x, y):
        nx, ny = heights.shape
        u = (x - x0) / dx
        v = (y - y0) / dy
        if u < 0.0 or u > nx - 1.0 or v < 0.0 or v > ny - 1.0:
            return -1e300
        iu = int(math.floor(u))
        iv = int(math.floor(v))
        if iu > nx - 2:
            iu = nx - 2
        if iv > ny - 2:
            iv = ny - 2
        fu = u - iu
        fv = v - iv
        return ((1.0 - fu) * (1.0 - fv) * heights[iu, iv]
                + fu * (1.0 - fv) * heights[iu + 1, iv]
                + (1.0 - fu) * fv * heights[iu, iv + 1]
                + fu * fv * heights[iu + 1, iv + 1])

    @njit(cache=True, nogil=True)
    def raycast_heightfield_numba(heights, x0, y0, dx, dy, ox, oy, oz,
                                  dirs, d_max, step, tol):
        n_rays = dirs.shape[0]
        out = np.full(n_rays, np.nan)
        n_steps = int(math.ceil(d_max / step))
        for k in range(n_rays):
            ux = dirs[k, 0]
            uy = dirs[k, 1]
            uz = dirs[k, 2]
            f0 = oz - _bilinear_scalar(heights, x0, y0, dx, dy, ox, oy)
            if f0 <= 0.0:
                out[k] = 0.0
                continue
            t_prev = 0.0
            hit_lo = -1.0
            hit_hi = -1.0
            for i in range(1, n_steps + 1):
                t = step * i
                if t > d_max:
                    t = d_max
                h = _bilinear_scalar(heights, x0, y0, dx, dy,
                                     ox + t * ux, oy + t * uy)
                if (oz + t * uz) - h <= 0.0:
                    hit_lo = t_prev
                    hit_hi = t
                    break
                t_prev = t
            if hit_hi < 0.0:
                continue
            t_lo = hit_lo
            t_hi = hit_hi
            while t_hi - t_lo > tol:
                t_mid = 0.5 * (t_lo + t_hi)
                h = _bilinear_scalar(heights, x0, y0, dx, dy,
                                     ox + t_mid * ux, oy + t_mid * uy)
                if (oz + t_mid * uz) - h <= 0.0:
                    t_hi = t_mid
                else:
                    t_lo = t_mid
            out[k] = t_hi
        return out


if BACKEND == "numba":
    matern_halfint = matern_halfint_numba
    gp_local_moments = gp_local_moments_numba
    fuse_height_updates = fuse_height_updates_numba
    raycast_heightfield = raycast_heightfield_numba
else:
    matern_halfint = matern_halfint_numpy
    gp_local_moments = gp_local_moments_numpy
    fuse_height_updates = fuse_height_updates_numpy
    raycast_heightfield = raycast_heightfield_numpy
