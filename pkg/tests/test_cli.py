import filecmp
import json
import subprocess
import sys

import numpy as np
import pytest

from oodkit import fileio
from oodkit.cli import main
from oodkit.config import SCHEMA, read_config, resolve_seed, spec_from_config
from oodkit.errors import ConfigError


def run_cli(*args):
    proc = subprocess.run([sys.executable, "-m", "oodkit.cli", *map(str, args)], capture_output=True, text=True)
    return proc.returncode, proc.stdout, proc.stderr


def test_run_bundled_h0(tmp_path):
    code, out, err = run_cli("run", "--config", "h0-gaussian", "--out-dir", tmp_path / "rep")
    assert code == 0, err
    assert (tmp_path / "rep" / "stats.csv").exists()
    assert json.loads(out)["out_dir"]


def test_gaussian_demo_deterministic(tmp_path):
    for name in ("a", "b"):
        code, _, err = run_cli("gaussian-demo", "--d", 1000, "--seed", 7, "--out-dir", tmp_path / name)
        assert code == 0, err
    assert filecmp.cmp(tmp_path / "a" / "auroc.csv", tmp_path / "b" / "auroc.csv", shallow=False)


def test_combine_zero_p_value(tmp_path, capsys):
    (tmp_path / "p.csv").write_text("id,kind,value\n0,score,0\n0,typicality,0.5\n")
    code = main(["combine", "--method", "fisher", "--input", str(tmp_path / "p.csv"), "--out", str(tmp_path / "c.csv")])
    assert code == 1
    assert json.loads(capsys.readouterr().err)["error"] == "validation_error"


def test_unknown_flag(capsys):
    assert main(["fit", "--bogus"]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "usage_error"


def test_schema_violation(tmp_path, capsys):
    doc = read_config("h0-gaussian")
    doc["surprise"] = 1
    (tmp_path / "c.json").write_text(json.dumps(doc))
    assert main(["run", "--config", str(tmp_path / "c.json"), "--out-dir", str(tmp_path / "o")]) == 2
    assert json.loads(capsys.readouterr().err)["error"] == "config_error"


def test_stage_error_reported(tmp_path, capsys):
    doc = read_config("shift-gaussian")
    doc["data"]["validation"]["d"] = 3
    (tmp_path / "c.json").write_text(json.dumps(doc))
    assert main(["run", "--config", str(tmp_path / "c.json"), "--out-dir", str(tmp_path / "o")]) == 1
    payload = json.loads(capsys.readouterr().err)
    assert payload["stage"]


def test_stepwise_matches_run(tmp_path, capsys):
    r = np.random.default_rng(0)
    np.save(tmp_path / "train.npy", r.standard_normal((500, 3)))
    np.save(tmp_path / "val.npy", r.standard_normal((300, 3)))
    np.save(tmp_path / "tin.npy", r.standard_normal((50, 3)))
    np.save(tmp_path / "tout.npy", r.standard_normal((50, 3)) + 2)
    t = lambda n: str(tmp_path / n)
    steps = [
        ["fit", "--model", "gaussian", "--data", t("train.npy"), "--out", t("m.bin"), "--records-out", t("train.rec")],
        ["fim", "--records", t("train.rec"), "--out", t("s.bin")],
        ["calibrate", "--summary", t("s.bin"), "--model", t("m.bin"), "--data", t("val.npy"), "--out-dir", t("nulls")],
        ["stats", "--summary", t("s.bin"), "--model", t("m.bin"), "--data", t("tin.npy"), "--out", t("in.csv")],
        ["stats", "--summary", t("s.bin"), "--model", t("m.bin"), "--data", t("tout.npy"), "--out", t("out.csv"),
         "--save-records", t("out.rec")],
        ["calibrate", "--summary", t("s.bin"), "--model", t("m.bin"), "--data", t("val.npy"), "--out-dir", t("nulls"),
         "--stats", t("in.csv"), "--pvalues-out", t("p_in.csv")],
        ["calibrate", "--summary", t("s.bin"), "--model", t("m.bin"), "--data", t("val.npy"), "--out-dir", t("nulls"),
         "--stats", t("out.csv"), "--pvalues-out", t("p_out.csv")],
        ["combine", "--method", "fisher", "--input", t("p_in.csv"), "--out", t("c_in.csv")],
        ["combine", "--method", "fisher", "--input", t("p_out.csv"), "--out", t("c_out.csv")],
        ["bh", "--input", t("c_out.csv"), "--alpha", "0.1", "--out", t("bh.csv")],
    ]
    for argv in steps:
        assert main(argv) == 0, (argv, capsys.readouterr().err)
    capsys.readouterr()
    assert main(["auroc", "--in", t("c_in.csv"), "--out", t("c_out.csv")]) == 0
    assert json.loads(capsys.readouterr().out)["auroc"] > 0.9
    assert len(fileio.read_gradient_records(t("out.rec"))) == 50


class TestConfig:
    def test_seed_resolution(self, monkeypatch):
        monkeypatch.setenv("OODKIT_SEED", "11")
        assert resolve_seed(None) == 11
        assert resolve_seed(3) == 3
        monkeypatch.delenv("OODKIT_SEED")
        assert resolve_seed(None) == 0

    def test_unknown_key(self):
        with pytest.raises(ConfigError):
            spec_from_config({"data": {"validation": "a", "test_in": "b"}, "nope": 1})

    def test_data_xor_records(self):
        with pytest.raises(ConfigError):
            spec_from_config({})

    def test_bundled_configs_valid(self):
        for name in ("h0-gaussian", "shift-gaussian"):
            spec = spec_from_config(read_config(name))
            assert spec.data["validation"].shape == (3000, 16)

    def test_schema_lists_statistics(self):
        assert "mmd_fisher" in SCHEMA["properties"]["statistics"]["items"]["enum"]
