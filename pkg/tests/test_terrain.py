import math

import numpy as np
import pytest
from scipy.optimize import curve_fit

from pilevol.errors import DomainError
from pilevol.terrain import (Domain, Terrain, bump_terrain, flat_terrain,
                             fractal_terrain, load_ascii_grid, ramp_terrain,
                             raycast, raycast_many, save_ascii_grid,
                             slope_sigma, step_terrain, true_volume)

DOM = Domain(0.0, 10.0, 0.0, 10.0)


class TestRaycast:
    def test_vertical_drop_on_flat(self):
        terr = flat_terrain(DOM, 0.0, margin=2.0)
        d = raycast(terr, [0.0, 0.0, 5.0], [0.0, 0.0, -1.0], 20.0)
        assert d == pytest.approx(5.0, abs=1e-6)

    def test_upward_ray_misses(self):
        terr = bump_terrain(DOM, seed=1, base=1.0, margin=2.0)
        assert raycast(terr, [5.0, 5.0, 6.0], [0.0, 0.0, 1.0], 50.0) is None

    def test_ramp_diagonal_matches_plane_intersection(self):
        terr = ramp_terrain(DOM, 0.5, margin=5.0)
        s = math.sqrt(0.5)
        d = raycast(terr, [0.0, 5.0, 2.0], [s, 0.0, -s], 20.0)
        # line-plane: 2 - t/sqrt(2) = (t/sqrt(2))/2  =>  t = 4*sqrt(2)/3
        assert d == pytest.approx(4.0 * math.sqrt(2.0) / 3.0, abs=2e-6)

    def test_non_unit_direction_rejected(self):
        terr = flat_terrain(DOM, 0.0)
        with pytest.raises(ValueError):
            raycast(terr, [0.0, 0.0, 5.0], [0.0, 0.0, -2.0], 20.0)

    def test_hit_point_lies_on_surface(self):
        terr = fractal_terrain(DOM, seed=4, base=3.0, amplitude=1.5,
                               margin=4.0)
        rng = np.random.default_rng(0)
        origin = np.array([5.0, 5.0, 10.0])
        n_checked = 0
        for _ in range(200):
            v = rng.normal(size=3)
            v[2] = -abs(v[2]) - 0.1
            v /= np.linalg.norm(v)
            d = raycast(terr, origin, v, 25.0)
            if d is None:
                continue
            hit = origin + d * v
            if terr.extent.contains(hit[0], hit[1]):
                assert abs(terr.height(hit[0], hit[1]) - hit[2]) <= 1e-5
                n_checked += 1
        assert n_checked > 50

    def test_miss_beyond_range(self):
        terr = flat_terrain(DOM, 0.0, margin=2.0)
        assert raycast(terr, [5.0, 5.0, 30.0], [0.0, 0.0, -1.0], 20.0) is None

    def test_batch_matches_single(self):
        terr = bump_terrain(DOM, seed=2, base=1.0, margin=3.0)
        rng = np.random.default_rng(1)
        dirs = rng.normal(size=(40, 3))
        dirs[:, 2] = -np.abs(dirs[:, 2])
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        origin = [5.0, 5.0, 8.0]
        batch = raycast_many(terr, origin, dirs, 30.0)
        for k in range(dirs.shape[0]):
            single = raycast(terr, origin, dirs[k], 30.0)
            if single is None:
                assert math.isnan(batch[k])
            else:
                assert batch[k] == single


class TestSlopeSigma:
    def test_flat_is_zero(self):
        assert slope_sigma(flat_terrain(DOM, 3.0, nx=9, ny=9)) == 0.0

    def test_plane_pooled_population(self):
        # slopes pool to {a (x-direction), 0 (y-direction)} in equal counts
        a = 0.8
        terr = ramp_terrain(DOM, a, nx=21, ny=21)
        assert slope_sigma(terr) == pytest.approx(a / math.sqrt(2.0),
                                                  rel=1e-12)

    def test_matches_histogram_fit_oracle(self):
        # slopes of a Gaussian random field are exactly normal, so the MLE
        # scale and an independent histogram fit must agree
        terr = fractal_terrain(DOM, seed=9, base=4.0, amplitude=1.5,
                               beta=2.6, nx=192, ny=192)
        h = terr.heights
        dx, dy = terr.spacing
        sx = (h[2:, :] - h[:-2, :]) / (2 * dx)
        sy = (h[:, 2:] - h[:, :-2]) / (2 * dy)
        pooled = np.concatenate([sx.ravel(), sy.ravel()])
        counts, edges = np.histogram(pooled, bins=60, density=True)
        centers = 0.5 * (edges[:-1] + edges[1:])

        def gauss(x, sigma):
            return np.exp(-x * x / (2 * sigma * sigma)) / (
                sigma * math.sqrt(2 * math.pi))

        (sigma_fit,), _ = curve_fit(gauss, centers, counts,
                                    p0=[pooled.std()])
        assert slope_sigma(terr) == pytest.approx(abs(sigma_fit), rel=0.02)


class TestTrueVolume:
    def test_constant_slab_exact(self):
        terr = flat_terrain(DOM, 2.5, margin=1.0)
        v = true_volume(terr, DOM, 80, 80)
        assert v == pytest.approx(2.5 * DOM.area, rel=1e-12)

    def test_unit_ramp_half(self):
        unit = Domain(0.0, 1.0, 0.0, 1.0)
        terr = ramp_terrain(unit, 1.0, margin=0.5)
        assert true_volume(terr, unit, 64, 64) == pytest.approx(0.5,
                                                                abs=1e-6)

    def test_richardson_self_consistency(self):
        terr = fractal_terrain(DOM, seed=3, base=4.0, amplitude=2.0,
                               margin=2.0)
        v8 = true_volume(terr, DOM, 8 * 15, 8 * 15)
        v16 = true_volume(terr, DOM, 16 * 15, 16 * 15)
        assert abs(v8 - v16) / abs(v16) < 1e-4

    def test_domain_must_be_covered(self):
        terr = flat_terrain(Domain(0, 5, 0, 5), 1.0)
        with pytest.raises(DomainError):
            true_volume(terr, DOM, 16, 16)


class TestTerrainGridIO:
    def test_round_trip(self, tmp_path):
        terr = bump_terrain(DOM, seed=5, nx=24, ny=24, margin=1.0)
        path = tmp_path / "terrain.asc"
        save_ascii_grid(path, terr)
        back = load_ascii_grid(path)
        np.testing.assert_array_equal(back.heights, terr.heights)
        assert back.origin == terr.origin
        assert back.spacing == terr.spacing

    def test_nodata_requires_fill(self, tmp_path):
        path = tmp_path / "grid.asc"
        path.write_text("ncols 2\nnrows 2\nxllcorner 0\nyllcorner 0\n"
                        "cellsize 1\nnodata_value -9999\n"
                        "1 2\n-9999 4\n")
        with pytest.raises(ValueError):
            load_ascii_grid(path)
        terr = load_ascii_grid(path, nodata_fill=0.0)
        assert terr.heights.min() == 0.0

    def test_step_terrain_shadows_exist(self):
        terr = step_terrain(Domain(-10, 10, -2, 2), 0.0, 0.0, 3.0,
                            margin=2.0)
        # grazing ray from the low side toward the step: hits the wall
        d = raycast(terr, np.array([-8.0, 0.0, 2.0]),
                    np.array([1.0, 0.0, 0.0]) / 1.0, 30.0)
        assert d is not None
        hit_x = -8.0 + d
        assert -0.6 < hit_x < 0.6
