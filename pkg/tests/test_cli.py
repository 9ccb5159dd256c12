"""Command-line interface: flags, outputs, exit codes."""

import json

import numpy as np
import pytest

from defbar.cli import main


class TestUsageErrors:
    def test_unknown_problem_exit_1(self, capsys):
        code = main(["--problem", "warp-drive"])
        assert code == 1
        err = capsys.readouterr().err
        assert "double-pipe" in err and "truss" in err

    def test_missing_problem_exit_1(self, capsys):
        assert main([]) == 1

    def test_bad_flag_exit_1(self, capsys):
        assert main(["--problem", "truss", "--solver", "gmres"]) == 1

    def test_missing_config_file(self, capsys):
        assert main(["--problem", "truss", "--config", "/nonexistent.json"]) == 1


class TestTrussRun:
    def test_truss_finds_both_points(self, tmp_path, capsys):
        code = main([
            "--problem", "truss", "--max-branches", "4",
            "--output", str(tmp_path), "--no-figures",
        ])
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        pts = [br["z"][:2] for br in summary["branches"]]
        assert any(abs(p[0] - 0.5) <= 1e-6 and abs(p[1] - 0.5) <= 1e-6 for p in pts)
        assert any(abs(p[0]) <= 1e-6 and abs(p[1] - 1.0) <= 1e-6 for p in pts)
        assert (tmp_path / "iterations.csv").exists()
        assert (tmp_path / "steps.csv").exists()

    def test_iterations_csv_totals(self, tmp_path):
        main(["--problem", "truss", "--max-branches", "2",
              "--output", str(tmp_path), "--no-figures"])
        summary = json.loads((tmp_path / "summary.json").read_text())
        lines = (tmp_path / "iterations.csv").read_text().strip().splitlines()[1:]
        totals: dict = {}
        for line in lines:
            b, _, phase, it = line.split(",")
            totals[(int(b), phase)] = totals.get((int(b), phase), 0) + int(it)
        for br in summary["branches"]:
            bid = br["id"]
            assert totals[(bid, "continuation")] == br["iterations"]["continuation"]
            assert totals[(bid, "deflation")] == br["iterations"]["deflation"]
            assert totals[(bid, "prediction")] == br["iterations"]["prediction"]

    def test_rerun_byte_identical_summary(self, tmp_path):
        out1, out2 = tmp_path / "r1", tmp_path / "r2"
        for out in (out1, out2):
            main(["--problem", "truss", "--max-branches", "2",
                  "--output", str(out), "--no-figures"])
        assert (out1 / "summary.json").read_bytes() == (out2 / "summary.json").read_bytes()

    def test_config_file_and_flag_precedence(self, tmp_path):
        cfg = tmp_path / "conf.json"
        cfg.write_text(json.dumps({"problem": "truss", "max_branches": 1, "mu0": 2.0}))
        out = tmp_path / "out"
        code = main(["--config", str(cfg), "--max-branches", "2",
                     "--output", str(out), "--no-figures"])
        assert code == 0
        summary = json.loads((out / "summary.json").read_text())
        assert summary["config"]["beta_max"] == 2  # flag wins
        assert summary["config"]["mu0"] == 2.0  # file value survives


class TestObstacleRun:
    def test_obstacle_solve(self, tmp_path):
        code = main(["--problem", "obstacle", "--ny", "24",
                     "--output", str(tmp_path), "--no-figures"])
        assert code == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["converged"] is True
        assert summary["n"] == 24

    def test_check_equivalence_prints_discrepancy(self, tmp_path, capsys):
        code = main(["--problem", "obstacle", "--check-equivalence",
                     "--output", str(tmp_path), "--no-figures"])
        assert code == 0
        out = capsys.readouterr().out
        assert "discrepancy" in out
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["equivalence_max_discrepancy"] <= 1e-10


class TestFluidRunSmall:
    @pytest.mark.slow
    def test_small_double_pipe_outputs(self, tmp_path):
        code = main([
            "--problem", "double-pipe", "--nx", "12", "--ny", "8",
            "--mu0", "100", "--solver", "bm", "--max-branches", "1",
            "--output", str(tmp_path),
        ])
        assert code == 0
        vtks = sorted(tmp_path.glob("branch_*.vtk"))
        pngs = sorted(tmp_path.glob("branch_*.png"))
        assert vtks and pngs
        assert (tmp_path / "iterations.png").exists()
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["mesh"]["h_max"] > 0
        from tests.test_output import parse_vtk_point_data

        fields = parse_vtk_point_data(vtks[0].read_text())
        assert {"rho", "p", "u"} <= set(fields)
        assert np.all(fields["rho"] >= -1e-12) and np.all(fields["rho"] <= 1 + 1e-12)
