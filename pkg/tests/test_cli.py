import csv
import json
import shutil

import pytest

from trackcosim.cli import main
from trackcosim.demo import demo_dir


@pytest.fixture
def demo_copy(tmp_path):
    dst = tmp_path / "demo"
    shutil.copytree(demo_dir(), dst)
    return dst


def run_cli(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def read_header(path):
    with open(path, newline="") as fh:
        return next(csv.reader(fh))


class TestAnalyze:
    def test_prints_both_steps_and_writes_report(self, capsys, tmp_path):
        code, out, _ = run_cli(capsys, "analyze", "--model", demo_dir(), "--mc", 50, "--output", tmp_path)
        assert code == 0
        lines = dict(line.split(" = ", 1) for line in out.splitlines() if " = " in line)
        base = float(lines["base_dt"].split()[0])
        achieved = float(lines["achieved_dt"].split()[0])
        assert achieved > base > 0
        assert read_header(tmp_path / "mass_scaling.csv") == ["dof", "base_ratio", "added_mass"]
        assert (tmp_path / "mass_scaling_summary.csv").is_file()

    def test_missing_model(self, capsys, tmp_path):
        code, _, err = run_cli(capsys, "analyze", "--model", tmp_path / "nope")
        assert code == 3 and "trackcosim: error" in err

    def test_broken_model(self, capsys, demo_copy):
        (demo_copy / "elements.csv").write_text("element_id,node_a,node_b\n0,0,999\n")
        code, _, err = run_cli(capsys, "analyze", "--model", demo_copy)
        assert code == 5 and err


class TestRun:
    def test_trace_header_and_outputs(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "run", "--config", demo_dir() / "scenario.cfg", "--t-end", 0.01, "--output", tmp_path
        )
        assert code == 0 and out.startswith("new: dt=")
        assert read_header(tmp_path / "trace_new.csv")[:4] == ["t", "s_wheel", "F_contact", "u_under_wheel"]
        timings = json.loads((tmp_path / "timings_new.json").read_text())
        assert timings["total"] > 0
        assert (tmp_path / "mass_scaling.csv").is_file()

    def test_standard_over_files(self, capsys, tmp_path):
        code, out, _ = run_cli(
            capsys, "run", "--config", demo_dir() / "scenario.cfg", "--approach", "standard",
            "--transport", "file_exchange", "--t-end", 2e-3, "--output", tmp_path,
        )
        assert code == 0 and out.startswith("standard:")
        assert (tmp_path / "trace_standard.csv").is_file()

    def test_reproducible(self, capsys, tmp_path):
        cfg = demo_dir() / "scenario.cfg"
        for name in ("a", "b"):
            assert run_cli(capsys, "--serial", "run", "--config", cfg, "--t-end", 0.01, "--output", tmp_path / name)[0] == 0
        a = (tmp_path / "a" / "trace_new.csv").read_bytes()
        b = (tmp_path / "b" / "trace_new.csv").read_bytes()
        assert a == b

    def test_bad_config(self, capsys, tmp_path):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("vehicle.m_s = 1\nrun.warp = 9\n")
        code, _, err = run_cli(capsys, "run", "--config", cfg)
        assert code == 4 and "run.warp" in err

    def test_missing_config(self, capsys, tmp_path):
        assert run_cli(capsys, "run", "--config", tmp_path / "absent.cfg")[0] == 3

    def test_divergence_exit_code(self, capsys, tmp_path):
        cfg = tmp_path / "unstable.cfg"
        text = (demo_dir() / "scenario.cfg").read_text()
        text = text.replace("model_dir = .", f"model_dir = {demo_dir()}").replace(
            "file = profile.csv", f"file = {demo_dir() / 'profile.csv'}"
        )
        cfg.write_text(text + "run.cfl = 5.0\n")
        code, _, err = run_cli(capsys, "run", "--config", cfg, "--t-end", 0.02, "--mc", 0, "--output", tmp_path)
        assert code == 6 and "diverged" in err


class TestCompareAndSweep:
    def test_compare_identical(self, capsys, tmp_path):
        run_cli(capsys, "run", "--config", demo_dir() / "scenario.cfg", "--t-end", 0.01, "--output", tmp_path)
        trace = tmp_path / "trace_new.csv"
        code, out, _ = run_cli(capsys, "compare", trace, trace, "--output", tmp_path)
        assert code == 0
        assert "max_rel_disp_dev = 0 %" in out
        assert json.loads((tmp_path / "comparison.json").read_text())["max_rel_disp_dev"] == 0.0

    def test_compare_missing(self, capsys, tmp_path):
        assert run_cli(capsys, "compare", tmp_path / "a.csv", tmp_path / "b.csv")[0] == 3

    def test_sweep(self, capsys, tmp_path):
        cfg = tmp_path / "short.cfg"
        text = (demo_dir() / "scenario.cfg").read_text()
        text = text.replace("model_dir = .", f"model_dir = {demo_dir()}").replace(
            "file = profile.csv", f"file = {demo_dir() / 'profile.csv'}"
        ).replace("t_end = 0.24", "t_end = 0.01")
        cfg.write_text(text)
        code, out, _ = run_cli(capsys, "--serial", "sweep", "--config", cfg, "--mc", 0, 0.01, "--output", tmp_path)
        assert code == 0 and out.count("m_c=") == 2
        assert read_header(tmp_path / "sweep.csv")[0] == "m_c"
        assert (tmp_path / "trace_reference.csv").is_file()


class TestUsage:
    @pytest.mark.parametrize("argv", [["run"], ["frobnicate"], ["analyze", "--model", ".", "--mc", "lots"]])
    def test_usage_errors(self, capsys, argv):
        assert main(argv) == 2

    def test_help(self, capsys):
        assert main(["--help"]) == 0

    def test_demo(self, capsys, tmp_path):
        code, _, _ = run_cli(capsys, "demo", "--output", tmp_path)
        assert code == 0
        for name in ("K.mtx", "M.mtx", "nodes.csv", "elements.csv", "supports.csv", "profile.csv", "scenario.cfg"):
            assert (tmp_path / name).is_file()
