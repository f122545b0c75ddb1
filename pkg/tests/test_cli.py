import math
import os
import subprocess
import sys

import numpy as np
import pytest

from magtopo.cli import main
from magtopo.export import read_csv_columns
from magtopo.fem import solve_state
from magtopo.materials import DesignState
from magtopo.mesh import MotorGeometry, generate_motor_mesh, save_mesh
from magtopo.objective import TargetCurve, build_gap_circle, objective


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def coarse_config(tmp_path_factory):
    d = tmp_path_factory.mktemp("cfg")
    p = d / "coarse.ini"
    p.write_text("[mesh]\nh = 0.008\n[optimizer]\nmax_iters = 6\n", encoding="utf-8")
    return p


class TestSolve:
    def test_default(self, tmp_path, motor_mesh, model, gap, target, capsys):
        assert run("solve", "--out", tmp_path) == 0
        for f in ("u.vtk", "trace.csv", "summary.txt"):
            assert (tmp_path / f).is_file()
        line = (tmp_path / "summary.txt").read_text().splitlines()[0]
        J = objective(gap, target, solve_state(motor_mesh, model, DesignState(motor_mesh)).u)
        assert line == f"J = {J!r}"
        cols = read_csv_columns(tmp_path / "trace.csv")
        assert list(cols) == ["theta", "b_rad", "b_target"] and len(cols["theta"]) == 720
        vtk = (tmp_path / "u.vtk").read_text()
        assert "SCALARS u double" in vtk and "SCALARS B_abs double" in vtk

    def test_bad_radius_ordering(self, tmp_path, capsys):
        cfg = tmp_path / "bad.ini"
        cfg.write_text("[geometry]\nr_magnet = 0.035\n")
        assert run("solve", "--config", cfg, "--out", tmp_path / "o") == 2
        assert "r_magnet" in capsys.readouterr().err

    def test_linear_vs_nonlinear(self, tmp_path, coarse_config):
        Js = []
        for mode in ("linear", "nonlinear"):
            out = tmp_path / mode
            assert run("solve", "--config", coarse_config, "--mode", mode, "--out", out) == 0
            Js.append(float((out / "summary.txt").read_text().split()[2]))
        assert Js[0] != Js[1]

    def test_mesh_override(self, tmp_path):
        mesh = generate_motor_mesh(MotorGeometry(), 0.008)
        mp = tmp_path / "m.mesh"
        with open(mp, "w", encoding="utf-8") as fh:
            save_mesh(mesh, fh)
        assert run("solve", "--mesh", mp, "--out", tmp_path / "o", "--seedless") == 0
        assert "elements = 324" in (tmp_path / "o" / "summary.txt").read_text()

    def test_missing_mesh_file(self, tmp_path):
        assert run("solve", "--mesh", tmp_path / "nope.mesh", "--out", tmp_path) == 2

    def test_unknown_key(self, tmp_path, capsys):
        cfg = tmp_path / "c.ini"
        cfg.write_text("[solver]\nfoo = 1\n")
        assert run("solve", "--config", cfg) == 2
        assert "foo" in capsys.readouterr().err

    def test_solver_failure_exit_1(self, tmp_path, coarse_config):
        cfg = tmp_path / "c.ini"
        cfg.write_text(coarse_config.read_text() + "[solver]\nmax_newton = 1\n")
        assert run("solve", "--config", cfg, "--mode", "nonlinear", "--out", tmp_path / "o") == 1


class TestSensitivity:
    def test_linear(self, tmp_path, coarse_config):
        assert run("sensitivity", "--config", coarse_config, "--out", tmp_path) == 0
        cols = read_csv_columns(tmp_path / "sens.csv")
        assert list(cols) == ["elem_id", "centroid_x", "centroid_y", "onoff", "topo"]
        assert len(cols["elem_id"]) == 36 and all(cols["topo"])
        assert "SCALARS topo double" in (tmp_path / "sens.vtk").read_text()

    def test_nonlinear_topo_empty(self, tmp_path, coarse_config):
        assert run("sensitivity", "--config", coarse_config, "--mode", "nonlinear", "--out", tmp_path) == 0
        cols = read_csv_columns(tmp_path / "sens.csv")
        assert all(v == "" for v in cols["topo"])
        assert "SCALARS topo" not in (tmp_path / "sens.vtk").read_text()

    def test_fd_check(self, tmp_path, coarse_config):
        assert run("sensitivity", "--config", coarse_config, "--fd-check", 5, "--out", tmp_path) == 0
        cols = read_csv_columns(tmp_path / "fd_check.csv")
        assert len(cols["rel_err"]) == 5
        assert max(float(x) for x in cols["rel_err"]) < 1e-3


class TestOptimize:
    def test_outputs_and_determinism(self, tmp_path, coarse_config):
        a, b = tmp_path / "a", tmp_path / "b"
        assert run("optimize", "--config", coarse_config, "--out", a) == 0
        assert run("optimize", "--config", coarse_config, "--out", b) == 0
        for f in ("history.csv", "design.csv", "trace.csv", "design.vtk"):
            assert (a / f).read_bytes() == (b / f).read_bytes()
        snaps = sorted(os.listdir(a / "designs"))
        assert snaps[0] == "design_000.csv"
        hist = read_csv_columns(a / "history.csv")
        assert list(hist) == ["iter", "J", "switched", "reverted"]
        assert len(snaps) == len(hist["iter"])

    def test_zero_iterations(self, tmp_path, coarse_config):
        cfg = tmp_path / "z.ini"
        cfg.write_text("[mesh]\nh = 0.008\n[optimizer]\nmax_iters = 0\n")
        assert run("optimize", "--config", cfg, "--out", tmp_path / "o") == 0
        hist = read_csv_columns(tmp_path / "o" / "history.csv")
        assert hist["iter"] == ["0"]


class TestPolarization:
    def test_disk(self, capsys):
        assert run("polarization", "disk", 2, 1, 256) == 0
        out = capsys.readouterr().out
        rows = [l.split() for l in out.splitlines()[1:3]]
        P = np.array(rows, dtype=float)
        np.testing.assert_allclose(P, 2 * math.pi / 3 * np.eye(2), rtol=1e-3, atol=1e-12)
        err = float(out.split("relative error = ")[1].split()[0])
        assert err < 1e-3

    def test_zero_contrast(self, capsys):
        assert run("polarization", "disk", 2, 2, 64) == 2
        assert "contrast" in capsys.readouterr().err

    def test_refine_table(self, capsys):
        assert run("polarization", "ellipse:2,1", 2, 1, 64, "--refine", 3) == 0
        lines = capsys.readouterr().out.splitlines()
        factors = [float(l.split()[2]) for l in lines if len(l.split()) == 3 and l.split()[0].isdigit()]
        assert len(factors) == 2 and min(factors) >= 2

    def test_bad_shape(self):
        assert run("polarization", "hexagon", 2, 1) == 2


def test_console_entry_point(tmp_path):
    r = subprocess.run([sys.executable, "-m", "magtopo", "polarization", "disk", "2", "2"],
                       capture_output=True, text=True)
    assert r.returncode == 2
    r = subprocess.run([sys.executable, "-m", "magtopo", "polarization", "disk", "3", "1", "64"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "relative error" in r.stdout
