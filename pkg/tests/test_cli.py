import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from riskflow.cli import COMMANDS, main

DESK_FLAGS = [
    "--alpha", "1", "--beta", "-1", "--a", "1", "--b", "-1", "--s0", "1", "--d0", "1",
    "--vs0", "0.05", "--vsx0", "0.1", "--vsx20", "0.08",
]
TOP_MATRIX = "grades,0,0.5,1\nhorizon,1\n0,0,1\n0,0,1\n0,0,1\n"
IDENTITY_MATRIX = "grades,0,0.5,1\nhorizon,1\n1,0,0\n0,1,0\n0,0,1\n"


def run(capsys, *argv):
    rc = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return rc, out, err


def assert_error(capsys, argv, code, status):
    rc, out, err = run(capsys, *argv)
    assert rc == status
    assert out == ""
    assert err.count("\n") == 1 and err.startswith(f"error: {code}: ")
    return err


def read_macro(path):
    return np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)


class TestCycle:
    def test_desk_example(self, tmp_path, capsys):
        out = tmp_path / "trace.csv"
        rc, stdout, err = run(capsys, "cycle", *DESK_FLAGS, "--dt", "1e-3", "--t-end", "18.85",
                              "--out", out, "--svg", tmp_path / "c.svg")
        assert rc == 0 and stdout == "" and err == ""
        lines = out.read_text().splitlines()
        assert lines[0] == "t,s,d,x_s,x_d,X_s,X_d,v_s,v_d,v_sx,v_dx,v_sx2,v_dx2,f,g"
        assert len(lines) == 18852
        summary = json.loads((tmp_path / "trace.json").read_text())
        assert summary["omega_analytic"] == 1.0
        assert summary["omega_estimated_s"] == pytest.approx(1.0, rel=5e-3)
        assert summary["omega_estimated_d"] == pytest.approx(1.0, rel=5e-3)
        assert summary["max_abs_err_vs_analytic"] <= 1e-6
        svg = (tmp_path / "c.svg").read_text()
        assert svg.count("<polyline") == 4 and 'width="800"' in svg

    def test_golden(self, tmp_path, capsys):
        out = tmp_path / "g.csv"
        assert run(capsys, "cycle", *DESK_FLAGS, "--dt", "0.5", "--t-end", "0.5", "--out", out)[0] == 0
        lines = out.read_bytes().split(b"\n")
        assert len(lines) == 4 and lines[-1] == b""
        assert lines[1] == (
            b"0,0,0.10000000000000001,-0.10000000000000001,0.059999999999999998,0.45000000000000001,"
            b"0.53000000000000003,0,0.050000000000000003,0,0.10000000000000001,0,0.080000000000000002,"
            b"-0.050000000000000003,0.080000000000000002"
        )
        row = np.array(lines[2].decode().split(","), dtype=float)
        t = 0.5
        # one RK4 step of a unit-frequency oscillator: error of order dt**5 / 120
        expect = {
            1: 0.1 * np.sin(t), 2: 0.1 * np.cos(t), 7: 0.05 * np.sin(t), 8: 0.05 * np.cos(t),
            13: 0.08 * np.sin(t) - 0.05 * np.cos(t), 14: 0.05 * np.sin(t) + 0.08 * np.cos(t),
        }
        for col, value in expect.items():
            assert row[col] == pytest.approx(value, abs=t**5 / 120)

    def test_positive_beta(self, tmp_path, capsys):
        err = assert_error(capsys, ["cycle", "--beta", "1", "--out", tmp_path / "x.csv"], "invalid-params", 2)
        assert err == "error: invalid-params: alpha*beta must be negative\n"
        assert not (tmp_path / "x.csv").exists()

    def test_config_with_flag_override(self, tmp_path, capsys):
        cfg = tmp_path / "run.json"
        cfg.write_text(json.dumps({"alpha": 4.0, "beta": -1.0, "dt": 0.01, "t_end": 1.0, "out": "o.csv"}))
        assert run(capsys, "cycle", "--config", cfg)[0] == 0
        assert json.loads((tmp_path / "o.json").read_text())["omega_analytic"] == 2.0
        assert run(capsys, "cycle", "--config", cfg, "--alpha", "1")[0] == 0
        assert json.loads((tmp_path / "o.json").read_text())["omega_analytic"] == 1.0

    def test_spatial_mode(self, tmp_path, capsys):
        out = tmp_path / "s.csv"
        rc, _, _ = run(capsys, "cycle", "--mode", "spatial", "--m", "40", "--dt", "0.01",
                       "--t-end", "6.3", "--out", out)
        assert rc == 0
        assert json.loads((tmp_path / "s.json").read_text())["max_abs_err_vs_analytic"] < 5e-3

    def test_config_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        assert_error(capsys, ["cycle", "--config", bad], "config", 2)
        bad.write_text(json.dumps({"alpha": 1, "gamma": 2}))
        assert_error(capsys, ["cycle", "--config", bad], "config", 2)
        assert_error(capsys, ["cycle", "--dt", "abc", "--out", tmp_path / "x"], "config", 2)
        assert_error(capsys, ["cycle"], "config", 2)
        assert_error(capsys, ["nosuch"], "config", 2)
        assert_error(capsys, ["cycle", "--config", tmp_path / "missing.json"], "io", 2)

    def test_write_failure(self, tmp_path, capsys):
        blocker = tmp_path / "file"
        blocker.write_text("x")
        assert_error(capsys, ["cycle", "--dt", "0.1", "--t-end", "0.2", "--out", blocker / "t.csv"], "io", 4)

    def test_threads_env(self, tmp_path, capsys, monkeypatch):
        monkeypatch.setenv("RISKFLOW_THREADS", "zero")
        assert_error(capsys, ["cycle", "--out", tmp_path / "x.csv"], "config", 2)
        monkeypatch.setenv("RISKFLOW_THREADS", "2")
        assert run(capsys, "cycle", "--dt", "0.1", "--t-end", "0.2", "--out", tmp_path / "x.csv")[0] == 0


class TestSimulate:
    def write(self, tmp_path, text, name="m.csv"):
        p = tmp_path / name
        p.write_text(text)
        return p

    def test_identity_keeps_mean_risk(self, tmp_path, capsys):
        m = self.write(tmp_path, IDENTITY_MATRIX)
        rc, _, _ = run(capsys, "simulate", "--matrix", m, "--out-dir", tmp_path / "o", "--steps", "15", "--agents", "300")
        assert rc == 0
        data = read_macro(tmp_path / "o" / "macro_A.csv")
        assert data.shape == (16, 4)
        np.testing.assert_array_equal(data[:, 2], data[0, 2])
        np.testing.assert_array_equal(data[:, 3], 0.0)

    @pytest.mark.parametrize("mode", ["mean", "field", "jump"])
    def test_top_grade_drift(self, tmp_path, capsys, mode):
        m = self.write(tmp_path, TOP_MATRIX)
        rc, _, _ = run(capsys, "simulate", "--matrix", m, "--out-dir", tmp_path / "o", "--steps", "40",
                       "--agents", "300", "--velocity-mode", mode, "--window", "3")
        assert rc == 0
        x = read_macro(tmp_path / "o" / "macro_A.csv")[:, 2]
        assert np.all(np.diff(x) >= -1e-12)
        assert x[-1] > x[0] and x[-1] <= 1.0

    def test_two_axes_and_snapshots(self, tmp_path, capsys):
        m1 = self.write(tmp_path, TOP_MATRIX, "a.csv")
        m2 = self.write(tmp_path, IDENTITY_MATRIX, "b.csv")
        cfg = tmp_path / "sim.json"
        cfg.write_text(json.dumps({
            "n": 2, "m": 5, "agents": 100, "matrices": ["a.csv", "b.csv"], "steps": 4,
            "snapshot_every": 2, "out_dir": "out", "mean_risk_from": "agents",
            "variables": {"A": {"kind": "uniform", "low": 1, "high": 2}, "B": {"kind": "constant", "value": 3}},
        }))
        assert run(capsys, "simulate", "--config", cfg)[0] == 0
        out = tmp_path / "out"
        assert (out / "field_B_000004.csv").exists()
        data = read_macro(out / "macro_B.csv")
        assert data.shape == (5, 6)
        np.testing.assert_array_equal(data[:, 3], data[0, 3])
        assert data[-1, 2] > data[0, 2]

    def test_missing_matrix(self, tmp_path, capsys):
        assert_error(capsys, ["simulate", "--matrix", tmp_path / "nope.csv", "--out-dir", tmp_path], "io", 2)

    def test_matrix_errors_report_line(self, tmp_path, capsys):
        m = self.write(tmp_path, "grades,0,1\nhorizon,1\n1,0\n0.5,0.4\n")
        err = assert_error(capsys, ["simulate", "--matrix", m, "--out-dir", tmp_path], "row-not-stochastic", 2)
        assert "line 4" in err
        m = self.write(tmp_path, "grades,0,1\nhorizon,1\n1,0\n0,oops\n")
        err = assert_error(capsys, ["simulate", "--matrix", m, "--out-dir", tmp_path], "parse", 2)
        assert "line 4, column 2" in err
        m = self.write(tmp_path, "grades,0,1\nhorizon,1\n1,0\n0.5,0.4\n")
        assert run(capsys, "simulate", "--matrix", m, "--renormalize", "true", "--out-dir", tmp_path / "r", "--steps", "2")[0] == 0

    def test_bad_mode(self, tmp_path, capsys):
        m = self.write(tmp_path, IDENTITY_MATRIX)
        assert_error(capsys, ["simulate", "--matrix", m, "--out-dir", tmp_path, "--velocity-mode", "x"], "invalid-params", 2)


class TestPde:
    def test_conservation(self, tmp_path, capsys):
        rc, _, _ = run(capsys, "pde", "--m", "100", "--steps", "1000", "--dt", "1e-3", "--out-dir", tmp_path)
        assert rc == 0
        summary = json.loads((tmp_path / "summary.json").read_text())
        assert summary["conservation_drift"] <= 1e-12
        assert summary["mean_risk_final"][0] == pytest.approx(0.5, abs=0.01)
        assert (tmp_path / "trace.csv").read_text().splitlines()[0] == "t,A,P_1,v_1,X_1"

    def test_cfl(self, tmp_path, capsys):
        assert_error(capsys, ["pde", "--dt", "0.1", "--out-dir", tmp_path], "cfl", 3)

    def test_csv_initial_and_snapshots(self, tmp_path, capsys):
        init = tmp_path / "init.csv"
        init.write_text("cell_index,coord_1,value\n0,0.25,1\n1,0.75,3\n")
        cfg = tmp_path / "p.json"
        cfg.write_text(json.dumps({"m": 2, "dt": 0.5, "steps": 2, "velocity": [0.1],
                                   "initial": {"kind": "csv", "path": str(init)},
                                   "snapshot_every": 1, "source": 0.5, "out_dir": "o"}))
        assert run(capsys, "pde", "--config", cfg)[0] == 0
        summary = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert summary["total_final"] == pytest.approx(2.0 + 0.5 * 1.0)
        assert summary["conservation_drift"] <= 1e-12
        assert (tmp_path / "o" / "field_000002.csv").exists()


class TestTransactions:
    def test_single_trade(self, tmp_path, capsys):
        t = tmp_path / "t.csv"
        t.write_text("x_1,y_1,volume,value,sv_1,bv_1\n0.3,0.7,2,5,0.1,0\n")
        assert run(capsys, "transactions", "--trades", t, "--m", "4", "--out-dir", tmp_path / "o")[0] == 0
        s = json.loads((tmp_path / "o" / "summary.json").read_text())
        assert s["exact"]["X_xU"] == [0.3] and s["exact"]["X_yC"] == [0.7]
        assert s["grid"]["X_xU"] == [0.375]
        assert s["exact"]["v_xU"] == [0.1]
        lines = (tmp_path / "o" / "sales_volume.csv").read_text().splitlines()
        assert lines[2] == "1,0.375,0.5"

    def test_empty(self, tmp_path, capsys):
        t = tmp_path / "t.csv"
        t.write_text("x_1,y_1,volume,value,sv_1,bv_1\n")
        assert_error(capsys, ["transactions", "--trades", t, "--out-dir", tmp_path], "config", 2)


class TestTransitions:
    def test_output(self, tmp_path, capsys):
        m = tmp_path / "m.csv"
        m.write_text("grades,0.2,0.8\nhorizon,1\n0.75,0.25\n0,1\n")
        rc, _, _ = run(capsys, "transitions", "--matrix", m, "--horizon", "2", "--out", tmp_path / "v.csv",
                       "--m", "2", "--field-out", tmp_path / "f.csv")
        assert rc == 0
        v1 = 0.25 * (0.8 - 0.2) / 2.0
        assert (tmp_path / "v.csv").read_text() == (
            f"grade_index,grade,mean_velocity\n1,{0.2:.17g},{v1:.17g}\n2,{0.8:.17g},0\n"
        )
        # first cell centre 0.25 lies 1/12 of the way from grade 0.2 to grade 0.8
        cell = (tmp_path / "f.csv").read_text().splitlines()[1].split(",")
        assert float(cell[2]) == pytest.approx(v1 * (1 - 0.05 / 0.6), rel=1e-14)


class TestAggregate:
    def test_hand_example(self, tmp_path, capsys):
        snap = tmp_path / "pop.csv"
        snap.write_text("id,x_1,v_1,A\n0,0.25,0.1,5\n1,0.8,0,0\n")
        rc, _, _ = run(capsys, "aggregate", "--snapshot", snap, "--variable", "A", "--m", "4",
                       "--out", tmp_path / "f.csv", "--flow-out", tmp_path / "p.csv")
        assert rc == 0
        assert (tmp_path / "f.csv").read_text() == (
            "cell_index,coord_1,value\n0,0.125,0\n1,0.375,5\n2,0.625,0\n3,0.875,0\n"
        )
        assert (tmp_path / "p.csv").read_text().splitlines()[2] == "1,0.375,0.5"

    def test_unknown_variable(self, tmp_path, capsys):
        snap = tmp_path / "pop.csv"
        snap.write_text("id,x_1,v_1,A\n0,0.25,0.1,5\n")
        assert_error(capsys, ["aggregate", "--snapshot", snap, "--variable", "B", "--out", tmp_path / "f"], "config", 2)

    def test_parse_error(self, tmp_path, capsys):
        snap = tmp_path / "pop.csv"
        snap.write_text("id,x_1,v_1,A\n0,0.25,zz,5\n")
        err = assert_error(capsys, ["aggregate", "--snapshot", snap, "--variable", "A", "--out", tmp_path / "f"], "parse", 2)
        assert "line 2, column 3" in err


class TestHelp:
    @pytest.mark.parametrize("command", sorted(COMMANDS))
    def test_every_flag_has_units(self, command, capsys):
        rc, out, _ = run(capsys, command, "--help")
        assert rc == 0
        text = " ".join(out.split())
        for p in COMMANDS[command][0]:
            flag = "--" + p.name.replace("_", "-")
            assert flag in text
            assert "[" in p.help and p.help.rstrip().endswith("]")

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "riskflow", "--help"], capture_output=True, text=True)
        assert res.returncode == 0 and "cycle" in res.stdout
