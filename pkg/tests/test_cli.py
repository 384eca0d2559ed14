import json
import math
import os

import numpy as np
import pytest

from pilevol.cli import main
from pilevol.configio import build_campaign, load_config_file
from pilevol.localization import LatticeSpec, quality_map

SMALL_INI = """
[domain]
x_max = 12
y_max = 12

[terrain]
kind = flat
height = 2.0

[grid]
nx = 6
ny = 6
prior_mean = 2.0

[kernel]
lengthscale = 2.0
sigma_t = 0.0

[planner]
horizon = 2
z = 8.0
step_radius = 2.0
n_candidates = 8

[feasibility]
tau = 0.5

[campaign]
seed = 5
checkpoints =
"""


@pytest.fixture
def ini(tmp_path):
    path = tmp_path / "small.cfg"
    path.write_text(SMALL_INI)
    return str(path)


class TestRun:
    def test_happy_path(self, ini, tmp_path, capsys):
        out = tmp_path / "run"
        code = main(["run", "--config", ini, "--mode", "greedy",
                     "--out", str(out), "--seed", "7"])
        assert code == 0
        assert (out / "manifest.json").exists()
        assert (out / "timeseries.csv").exists()
        assert (out / "trajectory.csv").exists()
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["seed"] == 7
        assert manifest["config"]["campaign.seed"] == 7
        assert "greedy" in capsys.readouterr().out

    def test_missing_config_exit_2(self, capsys):
        code = main(["run", "--config", "no/such/file.cfg"])
        assert code == 2
        assert "no/such/file.cfg" in capsys.readouterr().err

    def test_domain_error_exit_1(self, ini, tmp_path, capsys):
        # infeasible start: threshold no pose can reach
        code = main(["run", "--config", ini, "--out", str(tmp_path / "x"),
                     "--set", "feasibility.tau=1e12"])
        assert code == 1
        assert capsys.readouterr().err.startswith("error:")

    def test_manifest_rerun_bit_identical(self, ini, tmp_path):
        out_a = tmp_path / "a"
        out_b = tmp_path / "b"
        assert main(["run", "--config", ini, "--out", str(out_a)]) == 0
        assert main(["run", "--config", str(out_a / "manifest.json"),
                     "--out", str(out_b)]) == 0
        for name in ("timeseries.csv", "trajectory.csv", "grid_final.csv",
                     "manifest.json"):
            assert ((out_a / name).read_bytes()
                    == (out_b / name).read_bytes()), name

    def test_both_modes(self, ini, tmp_path):
        out = tmp_path / "both"
        code = main(["run", "--config", ini, "--mode", "both",
                     "--out", str(out)])
        assert code == 0
        assert (out / "greedy" / "manifest.json").exists()
        assert (out / "square_wave" / "manifest.json").exists()


class TestQmap:
    def test_csv_matches_library(self, ini, tmp_path):
        out = tmp_path / "q.csv"
        code = main(["qmap", "--config", ini, "--z", "7", "--yaw",
                     repr(math.pi / 2), "--nx", "5", "--ny", "4",
                     "--out", str(out)])
        assert code == 0
        cfg, _ = build_campaign(load_config_file(ini))
        lattice = LatticeSpec(cfg.domain.x_min, cfg.domain.x_max, 5,
                              cfg.domain.y_min, cfg.domain.y_max, 4)
        field = quality_map(cfg.fmap, cfg.camera, 7.0, math.pi / 2, lattice,
                            n_min=cfg.feasibility.n_min)
        lines = out.read_text().strip().splitlines()
        assert len(lines) == 5
        header = lines[0].split(",")
        assert header[0] == "y\\x"
        np.testing.assert_allclose([float(v) for v in header[1:]],
                                   lattice.xs())
        for iy, line in enumerate(lines[1:]):
            cells = line.split(",")[1:]
            for ix, cell in enumerate(cells):
                if cell == "":
                    assert math.isnan(field[iy, ix])
                else:
                    assert float(cell) == field[iy, ix]


class TestOtherCommands:
    def test_truth_prints_volume(self, ini, capsys):
        assert main(["truth", "--config", ini]) == 0
        v = float(capsys.readouterr().out.strip())
        assert v == pytest.approx(2.0 * 144.0, rel=1e-9)

    def test_sweep_writes_log(self, ini, tmp_path, capsys):
        out = tmp_path / "sweep.csv"
        code = main(["sweep", "--config", ini, "--x", "6", "--y", "6",
                     "--z", "8", "--yaw", repr(math.pi / 2),
                     "--out", str(out)])
        assert code == 0
        lines = out.read_text().strip().splitlines()
        assert lines[0].startswith("alpha,d_l,x,y,z,")
        assert len(lines) > 50

    def test_gen_terrain_round_trips(self, ini, tmp_path):
        out = tmp_path / "terr.asc"
        code = main(["gen-terrain", "--config", ini, "--kind", "fractal",
                     "--seed", "3", "--out", str(out)])
        assert code == 0
        from pilevol.terrain import load_ascii_grid
        terr = load_ascii_grid(out)
        assert terr.heights.shape[0] > 50

    def test_validate_config(self, ini, capsys):
        assert main(["validate", "--config", ini]) == 0
        assert "[PASS]" in capsys.readouterr().out

    def test_validate_emitted_run(self, ini, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["run", "--config", ini, "--out", str(out)]) == 0
        code = main(["validate", "--run-dir", str(out)])
        output = capsys.readouterr().out
        assert code == 0
        assert output.count("[PASS]") == 3
        assert "[FAIL]" not in output

    def test_validate_detects_violations(self, ini, tmp_path, capsys):
        out = tmp_path / "run"
        assert main(["run", "--config", ini, "--out", str(out)]) == 0
        # corrupt the trajectory: teleport a waypoint outside the ball
        traj = out / "trajectory.csv"
        lines = traj.read_text().splitlines()
        parts = lines[-1].split(",")
        parts[1] = "999.0"
        lines[-1] = ",".join(parts)
        traj.write_text("\n".join(lines) + "\n")
        assert main(["validate", "--run-dir", str(out)]) == 1
        assert "[FAIL]" in capsys.readouterr().out

    def test_usage_error_exit_2(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["run", "--mode", "sideways"])
        assert exc.value.code == 2

    def test_output_dir_env_default(self, ini, tmp_path, monkeypatch,
                                    capsys):
        monkeypatch.setenv("PILEVOL_OUT", str(tmp_path / "envout"))
        monkeypatch.chdir(tmp_path)
        assert main(["truth", "--config", ini]) == 0  # no output dir needed
        assert main(["qmap", "--config", ini, "--z", "7", "--nx", "3",
                     "--ny", "3"]) == 0
        assert (tmp_path / "envout" / "quality_map.csv").exists()
