import csv
import json
import subprocess
import sys

import pytest

from bilinear_control.cli import MODES, Scenario, dumps, emit_report, main, run_scenario
from bilinear_control import ValidationError


def write_config(tmp_path, cfg, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(cfg))
    return str(p)


def run_cli(tmp_path, mode, cfg, *extra, out="out"):
    rc = main([mode, "--config", write_config(tmp_path, cfg), "--out", str(tmp_path / out), *extra])
    return rc, tmp_path / out


class TestScenario:
    def test_minimum_truncation(self):
        with pytest.raises(ValidationError):
            Scenario.from_dict({"M": 12}, mode="certify")
        with pytest.raises(ValidationError):
            Scenario.from_dict({"M": 16, "N": 5}, mode="certify")
        assert Scenario.from_dict({"M": 20, "N": 5}, mode="certify").M == 20

    def test_mode_fields(self):
        with pytest.raises(ValidationError):
            Scenario.from_dict({"M": 16}, mode="moment-solve")
        with pytest.raises(ValidationError):
            Scenario.from_dict({"M": 16}, mode="steer-density")
        with pytest.raises(ValidationError):
            Scenario.from_dict({"M": 16}, mode="nonsense")
        with pytest.raises(ValidationError):
            Scenario.from_dict({"M": 16, "u0": "later"}, mode="certify")

    def test_seed_default_and_echo(self):
        sc = Scenario.from_dict({"M": 16}, mode="spectrum-sweep")
        assert sc.seed == 0
        rep = run_scenario(sc)["report"]
        assert rep["provenance"]["seed"] == 0 and rep["provenance"]["M"] == 16
        assert "u0" in rep["provenance"]


class TestModes:
    def test_certify(self):
        rep = run_scenario(Scenario.from_dict({"M": 64, "N": 4}, mode="certify"))["report"]
        res = rep["results"]
        collisions = json.loads(dumps(res["unperturbed"]["collisions"]))
        assert [[7, 1], [8, 4]] in collisions
        assert res["perturbed"]["gap"]["ok"]
        assert rep["provenance"]["u0"] > 0

    def test_steer_local_identity(self):
        rep = run_scenario(Scenario.from_dict({"M": 24, "targets": "identity"}, mode="steer-local"))
        res = rep["report"]["results"]
        assert res["defect"] < 1e-12
        u0 = rep["report"]["provenance"]["u0"]
        assert all(r[2] == u0 for r in rep["table"]["rows"])

    def test_spectrum_sweep_table(self):
        t = run_scenario(Scenario.from_dict({"M": 16}, mode="spectrum-sweep"))["table"]
        assert t["columns"] == ["u0", "j", "lambda", "a", "eta_norm"]

    def test_moment_solve(self):
        rep = run_scenario(Scenario.from_dict({"M": 16, "T": 4.0}, mode="moment-solve"))["report"]
        assert rep["results"]["max_residual"] < 1e-8 and rep["results"]["max_imag"] < 1e-12


class TestEmit:
    def test_byte_identical(self, tmp_path):
        cfg = {"M": 16, "seed": 3, "T": 4.0}
        rc1, d1 = run_cli(tmp_path, "moment-solve", cfg, out="a")
        rc2, d2 = run_cli(tmp_path, "moment-solve", cfg, out="b")
        assert rc1 == rc2 == 0
        assert (d1 / "moment-solve.json").read_bytes() == (d2 / "moment-solve.json").read_bytes()

    def test_seed_changes_output(self, tmp_path):
        cfg = {"M": 16, "T": 4.0}
        run_cli(tmp_path, "moment-solve", cfg, "--seed", "1", out="a")
        run_cli(tmp_path, "moment-solve", cfg, "--seed", "2", out="b")
        assert (tmp_path / "a/moment-solve.json").read_bytes() != (tmp_path / "b/moment-solve.json").read_bytes()

    def test_json_roundtrip(self, tmp_path):
        result = run_scenario(Scenario.from_dict({"M": 16, "N": 2}, mode="certify"))
        text = emit_report(result, "json", tmp_path / "r.json")
        back = json.loads(text)
        assert dumps(back) == text
        assert back["provenance"]["M"] == 16

    def test_float_format(self):
        assert dumps({"b": 0.1, "a": 1 / 3}) == dumps({"a": 1 / 3, "b": 0.1})
        assert "0.33333333333333331" in dumps({"a": 1 / 3})

    def test_csv_header(self, tmp_path):
        rc, d = run_cli(tmp_path, "steer-local", {"M": 24, "targets": "identity"}, "--format", "csv")
        assert rc == 0
        with open(d / "steer-local.csv") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t_start", "dt", "u"] and len(rows) > 1


class TestErrors:
    def test_invalid_config(self, tmp_path, capsys):
        rc, _ = run_cli(tmp_path, "certify", {"M": 4})
        assert rc == 1
        err = json.loads(capsys.readouterr().err)
        assert err["module"] == "cli"

    def test_missing_file(self, tmp_path, capsys):
        rc = main(["certify", "--config", str(tmp_path / "nope.json")])
        assert rc == 1 and "FileNotFoundError" in capsys.readouterr().err

    def test_bad_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STEER_THREADS", "zero")
        rc, _ = run_cli(tmp_path, "spectrum-sweep", {"M": 16})
        assert rc == 1

    def test_threads(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STEER_THREADS", "1")
        rc, d = run_cli(tmp_path, "spectrum-sweep", {"M": 16}, "--format", "csv")
        assert rc == 0 and (d / "spectrum-sweep.csv").exists()


def test_console_script(tmp_path):
    cfg = write_config(tmp_path, {"M": 16})
    out = subprocess.run([sys.executable, "-m", "bilinear_control.cli", "spectrum-sweep", "--config", cfg,
                          "--out", str(tmp_path)], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip().endswith("spectrum-sweep.json")


def test_modes_listed():
    assert set(MODES) == {"certify", "steer-local", "steer-global", "steer-density", "moment-solve", "spectrum-sweep"}
