import csv
import json

import pytest

from daclab import cli


def test_theory_prints_reports(capsys):
    assert cli.main(["theory", "example_4_1", "--param", "d_c1=5,10", "--param", "d_e1=10"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert [c["report"]["d_aug"] for c in out] == [25, 20]
    assert out[0]["report"]["dac_risk_pred"] == pytest.approx(0.1)
    assert out[0]["report"]["optimal_lambda"] is None


def test_theory_rejects_random_design_preset(capsys):
    assert cli.main(["theory", "example_4_2"]) == 2
    assert "fixed-design" in capsys.readouterr().err


def test_sweep_writes_csv(tmp_path, capsys):
    out = tmp_path / "r.csv"
    code = cli.main(["sweep", "example_4_1", "--trials", "3", "--seed", "1",
                     "--param", "d_c1=5", "--param", "d_e1=10", "--out", str(out)])
    assert code == 0
    rows = list(csv.DictReader(out.open()))
    assert len(rows) == 6
    assert {r["method"] for r in rows} == {"dac_hard", "da_erm"}
    assert (tmp_path / "r.csv.meta.json").exists()
    assert "dac_hard" in capsys.readouterr().out


def test_run_with_config_and_set(tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"preset": "example_6", "trials": 2, "sweep": {"d_aug": [24], "lambda": [1.0]}}))
    out = tmp_path / "r.json"
    code = cli.main(["run", "--config", str(cfg), "--set", "noise_std=0.316", "--out", str(out),
                     "--format", "json"])
    assert code == 0
    meta = json.loads((tmp_path / "r.json.meta.json").read_text())
    assert meta["config"]["overrides"]["noise_std"] == 0.316
    assert len(json.loads(out.read_text())) == 2 * 4


def test_expansion_subcommand(tmp_path, capsys):
    out = tmp_path / "fuzz.json"
    assert cli.main(["expansion", "--fuzz", "30", "--seed", "2", "--n-max", "8", "--out", str(out)]) == 0
    summary = json.loads(capsys.readouterr().out)
    assert summary["passed"] and summary["counts"]["instances"] == 30
    assert json.loads(out.read_text())["trials"] == 30


def test_verify_subset(capsys):
    assert cli.main(["verify", "--only", "2,10"]) == 0
    out = capsys.readouterr().out
    assert "criterion  2" in out and "2/2 criteria passed" in out


def test_bad_inputs_exit_with_code_2(tmp_path, capsys):
    assert cli.main(["run", "example_9"]) == 2
    assert cli.main(["sweep", "example_4_1", "--param", "lambda=1"]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "missing.json")]) == 2
    assert "daclab: error" in capsys.readouterr().err
    with pytest.raises(SystemExit):
        cli.main(["frobnicate"])
