"""Command-line interface.

Subcommands: run (campaign), qmap (quality-of-fix map), sweep (single-pose
sweep dump), truth (reference volume), gen-terrain (synthetic terrain file),
validate (config or emitted-run checks).

Exit codes: 0 success, 1 domain error, 2 usage error. Diagnostics go to
stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from . import _kernels
from .campaign import run_campaign, write_report
from .configio import (OUTPUT_DIR_ENV, build_campaign, default_output_dir,
                       load_config_file)
from .errors import PilevolError
from .frames import Pose
from .lidar import save_measurement_log, scan_sweep
from .localization import (LatticeSpec, predicted_covariance, quality_map,
                           quality_of_fix, save_quality_map)
from .terrain import save_ascii_grid, true_volume


def _load_sections(args) -> dict:
    if getattr(args, "config", None):
        return load_config_file(args.config)
    return {}


def _overrides(pairs) -> dict:
    out = {}
    for pair in pairs or []:
        if "=" not in pair or "." not in pair.split("=", 1)[0]:
            raise PilevolError(f"override must look like section.key=value: "
                               f"{pair!r}")
        dotted, value = pair.split("=", 1)
        out[dotted.strip()] = value.strip()
    return out


def _cmd_run(args) -> int:
    cfg, effective = build_campaign(_load_sections(args),
                                    _overrides(args.set))
    if args.seed is not None:
        cfg, effective = build_campaign(_load_sections(args),
                                        {**_overrides(args.set),
                                         "campaign.seed": args.seed})
    out_root = args.out or default_output_dir()
    modes = ["greedy", "square_wave"] if args.mode == "both" else [args.mode]
    for mode in modes:
        report = run_campaign(cfg, mode, threads=args.threads)
        out_dir = (os.path.join(out_root, mode) if len(modes) > 1
                   else out_root)
        manifest = write_report(report, out_dir, effective, cfg.seed)
        res = manifest["results"]
        print(f"{mode}: steps={res['steps']} mu_v={res['mu_v']:.4f} "
              f"sigma_v={res['sigma_v']:.4f} rel_err={res['rel_err']:.4%} "
              f"-> {out_dir}")
    return 0


def _cmd_qmap(args) -> int:
    cfg, _ = build_campaign(_load_sections(args), _overrides(args.set))
    lattice = LatticeSpec(cfg.domain.x_min, cfg.domain.x_max, args.nx,
                          cfg.domain.y_min, cfg.domain.y_max, args.ny)
    field = quality_map(cfg.fmap, cfg.camera, args.z, args.yaw, lattice,
                        n_min=cfg.feasibility.n_min, threads=args.threads)
    out = args.out or os.path.join(default_output_dir(), "quality_map.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_quality_map(out, lattice, field)
    print(out)
    return 0


def _cmd_sweep(args) -> int:
    cfg, _ = build_campaign(_load_sections(args), _overrides(args.set))
    pose = Pose(np.array([args.x, args.y, args.z]), yaw=args.yaw)
    cov = predicted_covariance(pose, cfg.fmap, cfg.camera,
                               n_min=cfg.feasibility.n_min)
    measurements = scan_sweep(pose, cfg.lidar, cfg.terrain, cov,
                              args.seed, cfg.kernel.sigma_t)
    out = args.out or os.path.join(default_output_dir(), "sweep.csv")
    os.makedirs(os.path.dirname(out) or ".", exist_ok=True)
    save_measurement_log(out, measurements)
    print(f"{len(measurements)} returns -> {out}")
    return 0


def _cmd_truth(args) -> int:
    cfg, _ = build_campaign(_load_sections(args), _overrides(args.set))
    v = true_volume(cfg.terrain, cfg.domain,
                    cfg.truth_refinement * cfg.grid_nx,
                    cfg.truth_refinement * cfg.grid_ny)
    print(repr(v))
    return 0


def _cmd_gen_terrain(args) -> int:
    overrides = _overrides(args.set)
    if args.kind:
        overrides["terrain.kind"] = args.kind
    if args.seed is not None:
        overrides["terrain.seed"] = args.seed
    cfg, _ = build_campaign(_load_sections(args), overrides)
    save_ascii_grid(args.out, cfg.terrain)
    print(args.out)
    return 0


def _cmd_validate(args) -> int:
    if args.run_dir:
        return _validate_run_dir(args.run_dir)
    cfg, _ = build_campaign(_load_sections(args), _overrides(args.set))
    loc = cfg.localization_context()
    checks = [
        ("terrain covers domain", cfg.terrain.covers(cfg.domain)),
        ("start waypoint in C_free", loc.in_cfree(cfg.start.as_pose())),
        ("grid positive prior variance", cfg.prior_var > 0.0),
    ]
    return _report_checks(checks)


def _validate_run_dir(run_dir: str) -> int:
    manifest_path = os.path.join(run_dir, "manifest.json")
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    cfg, _ = build_campaign(load_config_file(manifest_path))
    loc = cfg.localization_context()

    waypoints = []
    with open(os.path.join(run_dir, manifest["files"]["trajectory"])) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            row = dict(zip(header, line.strip().split(",")))
            waypoints.append((float(row["x"]), float(row["y"]),
                              float(row["z"]), float(row["yaw"])))
    sigmas = []
    with open(os.path.join(run_dir, manifest["files"]["timeseries"])) as fh:
        header = fh.readline().strip().split(",")
        for line in fh:
            row = dict(zip(header, line.strip().split(",")))
            sigmas.append(float(row["sigma_v"]))

    q_ok = True
    ball_ok = True
    r = cfg.planner.step_radius
    prev = None
    for x, y, z, yaw in waypoints:
        pose = Pose(np.array([x, y, z]), yaw=yaw)
        try:
            q = quality_of_fix(predicted_covariance(
                pose, cfg.fmap, cfg.camera, n_min=cfg.feasibility.n_min))
        except PilevolError:
            q = -math.inf
        if not (q > cfg.feasibility.tau and cfg.feasibility.contains(pose)):
            q_ok = False
        if prev is not None:
            d = math.hypot(x - prev[0], y - prev[1])
            if d > r * (1.0 + 1e-9):
                ball_ok = False
        prev = (x, y)
    monotone = all(b <= a * (1.0 + 1e-12)
                   for a, b in zip(sigmas[:-1], sigmas[1:]))
    checks = [
        (f"all {len(waypoints)} waypoints feasible (q_pos > tau, in C)", q_ok),
        (f"ball constraint |r_k+1 - r_k| <= {r}", ball_ok),
        ("sigma_v series non-increasing", monotone),
    ]
    return _report_checks(checks)


def _report_checks(checks) -> int:
    ok = True
    for name, passed in checks:
        print(f"[{'PASS' if passed else 'FAIL'}] {name}")
        ok = ok and passed
    return 0 if ok else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="pilevol",
        description="Drone stockpile-volume survey simulator "
                    f"(kernel backend: {_kernels.BACKEND})")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="INI config or run manifest JSON")
        p.add_argument("--set", action="append", metavar="SECTION.KEY=VALUE",
                       help="override a config value (repeatable)")

    p = sub.add_parser("run", help="execute a survey campaign")
    common(p)
    p.add_argument("--mode", choices=["greedy", "square_wave", "both"],
                   default="greedy")
    p.add_argument("--seed", type=int, help="override campaign.seed")
    p.add_argument("--out", help=f"output directory (default ${OUTPUT_DIR_ENV}"
                                 " or ./pilevol_out)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (results are thread-count independent)")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("qmap", help="quality-of-fix map over the domain")
    common(p)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--nx", type=int, default=41)
    p.add_argument("--ny", type=int, default=41)
    p.add_argument("--out")
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=_cmd_qmap)

    p = sub.add_parser("sweep", help="dump one LiDAR sweep at a pose")
    common(p)
    p.add_argument("--x", type=float, required=True)
    p.add_argument("--y", type=float, required=True)
    p.add_argument("--z", type=float, required=True)
    p.add_argument("--yaw", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("truth", help="reference volume of the terrain")
    common(p)
    p.set_defaults(func=_cmd_truth)

    p = sub.add_parser("gen-terrain", help="write a synthetic terrain file")
    common(p)
    p.add_argument("--kind", choices=["flat", "ramp", "bumps", "fractal",
                                      "step"])
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_gen_terrain)

    p = sub.add_parser("validate",
                       help="check a config, or post-check an emitted run")
    common(p)
    p.add_argument("--run-dir", help="directory containing manifest.json")
    p.set_defaults(func=_cmd_validate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except FileNotFoundError as exc:
        print(f"error: file not found: {exc}", file=sys.stderr)
        return 2
    except PilevolError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
