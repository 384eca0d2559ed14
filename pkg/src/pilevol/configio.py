"""Config file parsing and campaign assembly.

Config files are flat INI (section / key = value). Every key is optional;
defaults are resolved here, including the derived ones (kernel lengthscale
from the domain width, slope statistic from the terrain, lawnmower pitch
from the waypoint budget). The full effective configuration, defaults
included, is returned alongside the built objects so every run manifest
records complete provenance. A manifest's ``config`` block can be fed back
in place of a config file to reproduce a run bit-identically.
"""

from __future__ import annotations

import configparser
import json
import math
import os

import numpy as np

from .campaign import CampaignConfig, feature_wall
from .errors import ConfigError
from .frames import CameraModel, down_camera_mount, front_camera_mount
from .lidar import LidarModel
from .localization import FeasibilityConfig, FeatureMap
from .planner import PlannerConfig, Waypoint
from .surface import KernelConfig
from .terrain import (Domain, Terrain, bump_terrain, flat_terrain,
                      fractal_terrain, load_ascii_grid, ramp_terrain,
                      slope_sigma, step_terrain)

OUTPUT_DIR_ENV = "PILEVOL_OUT"


def default_output_dir() -> str:
    return os.environ.get(OUTPUT_DIR_ENV, "pilevol_out")


def load_config_file(path) -> dict:
    """Read an INI config or a run manifest (JSON); returns {section: {key: str}}."""
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    with open(path) as fh:
        text = fh.read()
    if text.lstrip().startswith("{"):
        manifest = json.loads(text)
        flat = manifest.get("config", manifest)
        sections: dict[str, dict[str, str]] = {}
        for dotted, value in flat.items():
            section, key = dotted.split(".", 1)
            sections.setdefault(section, {})[key] = (
                repr(value) if isinstance(value, float) else str(value))
        return sections
    parser = configparser.ConfigParser()
    parser.read_string(text)
    return {s: dict(parser.items(s)) for s in parser.sections()}


class _Resolver:
    """Pulls typed values out of the raw sections, recording every effective
    value (defaults included) for the manifest."""

    def __init__(self, sections: dict, overrides: dict | None = None):
        self.sections = {s: dict(kv) for s, kv in (sections or {}).items()}
        for dotted, value in (overrides or {}).items():
            section, key = dotted.split(".", 1)
            self.sections.setdefault(section, {})[key] = str(value)
        self.effective: dict[str, object] = {}

    def get(self, section: str, key: str, typ, default):
        raw = self.sections.get(section, {}).get(key)
        if raw is None:
            value = default
        else:
            try:
                if typ is bool:
                    value = str(raw).strip().lower() in ("1", "true", "yes",
                                                         "on")
                else:
                    value = typ(raw)
            except ValueError as exc:
                raise ConfigError(
                    f"bad value for {section}.{key}: {raw!r}") from exc
        self.effective[f"{section}.{key}"] = value
        return value


def _build_terrain(r: _Resolver, domain: Domain) -> Terrain:
    kind = r.get("terrain", "kind", str, "fractal")
    margin = r.get("terrain", "margin", float, 2.0)
    nx = r.get("terrain", "nx", int, 129)
    ny = r.get("terrain", "ny", int, 129)
    if kind == "file":
        path = r.get("terrain", "path", str, "")
        if not path:
            raise ConfigError("terrain.kind=file requires terrain.path")
        return load_ascii_grid(path)
    if kind == "flat":
        height = r.get("terrain", "height", float, 5.0)
        return flat_terrain(domain, height, margin=margin)
    if kind == "ramp":
        slope = r.get("terrain", "slope", float, 0.25)
        offset = r.get("terrain", "offset", float, 2.0)
        return ramp_terrain(domain, slope, offset, nx=nx, ny=ny,
                            margin=margin)
    if kind == "bumps":
        seed = r.get("terrain", "seed", int, 1)
        base = r.get("terrain", "base", float, 3.0)
        amplitude = r.get("terrain", "amplitude", float, 2.0)
        n_bumps = r.get("terrain", "n_bumps", int, 6)
        return bump_terrain(domain, seed, n_bumps=n_bumps,
                            amplitude=amplitude, base=base, nx=nx, ny=ny,
                            margin=margin)
    if kind == "fractal":
        seed = r.get("terrain", "seed", int, 1)
        base = r.get("terrain", "base", float, 5.0)
        amplitude = r.get("terrain", "amplitude", float, 1.5)
        beta = r.get("terrain", "beta", float, 3.0)
        return fractal_terrain(domain, seed, base=base, amplitude=amplitude,
                               beta=beta, nx=nx, ny=ny, margin=margin)
    if kind == "step":
        step_x = r.get("terrain", "step_x", float, 0.0)
        low = r.get("terrain", "low", float, 0.0)
        high = r.get("terrain", "high", float, 3.0)
        return step_terrain(domain, step_x, low, high, margin=margin)
    raise ConfigError(f"unknown terrain.kind {kind!r}")


def _build_features(r: _Resolver, domain: Domain) -> FeatureMap:
    kind = r.get("features", "kind", str, "wall")
    if kind == "file":
        path = r.get("features", "path", str, "")
        if not path:
            raise ConfigError("features.kind=file requires features.path")
        return FeatureMap.load(path)
    if kind != "wall":
        raise ConfigError(f"unknown features.kind {kind!r}")
    axis = r.get("features", "axis", str, "y")
    position = r.get("features", "position", float, domain.y_max + 4.0)
    span_min = r.get("features", "span_min", float, domain.x_min - 4.0)
    span_max = r.get("features", "span_max", float, domain.x_max + 4.0)
    z_min = r.get("features", "z_min", float, 1.0)
    z_max = r.get("features", "z_max", float, 15.0)
    n_span = r.get("features", "n_span", int, 10)
    n_z = r.get("features", "n_z", int, 5)
    return feature_wall(axis, position, (span_min, span_max), (z_min, z_max),
                        n_span, n_z)


def build_campaign(sections: dict, overrides: dict | None = None
                   ) -> tuple[CampaignConfig, dict]:
    """Build a CampaignConfig from raw config sections.

    Returns the config and the flat effective-value dict for the manifest.
    """
    r = _Resolver(sections, overrides)

    domain = Domain(r.get("domain", "x_min", float, 0.0),
                    r.get("domain", "x_max", float, 20.0),
                    r.get("domain", "y_min", float, 0.0),
                    r.get("domain", "y_max", float, 20.0))
    terrain = _build_terrain(r, domain)
    fmap = _build_features(r, domain)

    mount_kind = r.get("camera", "mount", str, "front")
    offset = np.array([r.get("camera", "offset_x", float, 0.0),
                       r.get("camera", "offset_y", float, 0.0),
                       r.get("camera", "offset_z", float, 0.0)])
    if mount_kind == "front":
        mount = front_camera_mount(offset)
    elif mount_kind == "down":
        mount = down_camera_mount(offset)
    else:
        raise ConfigError(f"unknown camera.mount {mount_kind!r}")
    camera = CameraModel(
        fx=r.get("camera", "fx", float, 500.0),
        fy=r.get("camera", "fy", float, 500.0),
        cx=r.get("camera", "cx", float, 640.0),
        cy=r.get("camera", "cy", float, 480.0),
        width=r.get("camera", "width", float, 1280.0),
        height=r.get("camera", "height", float, 960.0),
        mount=mount,
        pixel_noise=r.get("camera", "pixel_noise", float, 1.0))

    lidar = LidarModel(
        angular_resolution=r.get("lidar", "angular_resolution", float,
                                 math.radians(0.5)),
        scan_rate=r.get("lidar", "scan_rate", float, 10000.0),
        d_min=r.get("lidar", "d_min", float, 0.5),
        d_max=r.get("lidar", "d_max", float, 30.0),
        angle_variance=r.get("lidar", "angle_std", float,
                             math.radians(0.1)) ** 2,
        range_variance=r.get("lidar", "range_std", float, 0.02) ** 2)

    sigma_t_default = round(slope_sigma(terrain), 6)
    kernel = KernelConfig(
        lengthscale=r.get("kernel", "lengthscale", float,
                          round(domain.width / 5.0, 6)),
        nu=r.get("kernel", "nu", float, 1.5),
        gamma=r.get("kernel", "gamma", float, 4.0),
        sigma_t=r.get("kernel", "sigma_t", float, sigma_t_default),
        update_radius_factor=r.get("kernel", "update_radius_factor", float,
                                   1.0))

    grid_nx = r.get("grid", "nx", int, 15)
    grid_ny = r.get("grid", "ny", int, 15)
    prior_mean = r.get("grid", "prior_mean", float, 5.0)
    prior_var = r.get("grid", "prior_var", float, 4.0)

    z = r.get("planner", "z", float, 12.0)
    yaw = r.get("planner", "yaw", float, round(math.pi / 2.0, 12))
    horizon = r.get("planner", "horizon", int, 50)
    step_radius = r.get("planner", "step_radius", float, 2.5)
    planner = PlannerConfig(
        step_radius=step_radius,
        z=z,
        yaw=yaw,
        horizon=horizon,
        h0=r.get("planner", "h0", float, prior_mean),
        n_candidates=r.get("planner", "n_candidates", int, 16),
        include_stay=r.get("planner", "include_stay", bool, True),
        target_ratio=(r.get("planner", "target_ratio", float, 0.0) or None))

    feasibility = FeasibilityConfig(
        tau=r.get("feasibility", "tau", float, 2.0),
        n_min=r.get("feasibility", "n_min", int, 4),
        lower=np.array([r.get("feasibility", "x_min", float, domain.x_min),
                        r.get("feasibility", "y_min", float, domain.y_min),
                        r.get("feasibility", "z_min", float, 1.0)]),
        upper=np.array([r.get("feasibility", "x_max", float, domain.x_max),
                        r.get("feasibility", "y_max", float, domain.y_max),
                        r.get("feasibility", "z_max", float, 25.0)]),
        yaw_min=r.get("feasibility", "yaw_min", float, 0.0),
        yaw_max=r.get("feasibility", "yaw_max", float,
                      round(2.0 * math.pi, 12)))

    # lawnmower pitch sized so the benchmark path is at least the greedy
    # budget long (it is then truncated to the same length and sample
    # count); pitch = height/(lanes-1) exactly, so the lane count survives
    # the floor() in the generator
    path_budget = horizon * step_radius
    lanes = max(math.ceil((path_budget - domain.height) / domain.width), 1)
    pitch_default = (domain.height / (lanes - 1) if lanes > 1
                     else domain.height)
    pitch_default = min(pitch_default, domain.height)

    cfg = CampaignConfig(
        domain=domain,
        terrain=terrain,
        fmap=fmap,
        camera=camera,
        lidar=lidar,
        kernel=kernel,
        feasibility=feasibility,
        planner=planner,
        start=Waypoint(
            r.get("campaign", "start_x", float,
                  round(domain.x_min + step_radius, 6)),
            r.get("campaign", "start_y", float,
                  round(domain.y_min + step_radius, 6)),
            z, yaw),
        seed=r.get("campaign", "seed", int, 1),
        grid_nx=grid_nx,
        grid_ny=grid_ny,
        prior_mean=prior_mean,
        prior_var=prior_var,
        square_pitch=r.get("campaign", "square_pitch", float, pitch_default),
        sweep_revolutions=r.get("campaign", "revolutions", int, 1),
        max_localization_failures=r.get("campaign",
                                        "max_localization_failures", int, 3),
        checkpoints=tuple(
            int(v) for v in str(
                r.get("campaign", "checkpoints", str, "20,50")).split(",")
            if str(v).strip()),
        truth_refinement=r.get("campaign", "truth_refinement", int, 8))
    return cfg, r.effective
