import json
from pathlib import Path

import pytest

from clipflow import cli

ROOT = Path(__file__).resolve().parents[1]
SMOKE = str(ROOT / "configs" / "smoke.json")


def test_account(capsys):
    assert cli.main(["account", "--sigma", "1.1", "--sampling-rate", "0.004266",
                     "--steps", "1000", "--delta", "1e-5"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["mu"] == pytest.approx(0.152933773244874, rel=1e-12)
    assert 0.5 < out["eps"] < 0.6


def test_account_bad_input_exit_code():
    assert cli.main(["account", "--sigma", "1", "--sampling-rate", "2", "--steps", "1",
                     "--delta", "1e-5"]) == 2


def test_missing_config_exit_code(tmp_path, capsys):
    assert cli.main(["train", "--config", str(tmp_path / "nope.json")]) == 2
    assert "not found" in capsys.readouterr().err


def test_invalid_config_exit_code(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text(json.dumps({"steps": 1, "clip": {"mode": "sideways"}}))
    assert cli.main(["train", "--config", str(p)]) == 2
    assert "clip" in capsys.readouterr().err


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_divergence_exit_code(tmp_path):
    p = tmp_path / "boom.json"
    p.write_text(json.dumps({
        "dataset": {"kind": "synthetic_regression", "n": 10, "dim": 2},
        "optimizer": {"kind": "gd", "lr": 1e8},
        "clip": {"mode": "none"}, "steps": 30,
    }))
    assert cli.main(["train", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_fixtures_command(capsys):
    assert cli.main(["fixtures"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert [line.split()[:2] for line in lines] == [["PASS", f"fact{k}"] for k in range(1, 5)]


def test_train_then_analyze(tmp_path, capsys):
    out = tmp_path / "run"
    assert cli.main(["train", "--config", SMOKE, "--out", str(out)]) == 0
    ckpt = str(out / "model.json")
    assert cli.main(["ntk-analyze", "--config", SMOKE, "--checkpoint", ckpt,
                     "--samples", "10", "--out", str(tmp_path / "ntk")]) == 0
    rep = json.loads((tmp_path / "ntk" / "ntk_report.json").read_text())
    assert rep["kind"] == "sum_Hrcr" and rep["n"] == 30
    assert cli.main(["calibrate", "--config", SMOKE, "--checkpoint", ckpt,
                     "--out", str(tmp_path / "cal")]) == 0
    assert (tmp_path / "cal" / "reliability.csv").exists()
    assert cli.main(["mia", "--config", SMOKE, "--checkpoint", ckpt, "--out", str(tmp_path / "mia")]) == 0
    assert (tmp_path / "mia" / "mia.csv").read_text().startswith("class,auc\nall,")
    assert cli.main(["calibrate", "--config", SMOKE, "--checkpoint", str(tmp_path / "x.json")]) == 2


def test_paired_train(tmp_path):
    assert cli.main(["train", "--config", SMOKE, "--out", str(tmp_path), "--paired", "--seed", "2"]) == 0
    assert (tmp_path / "paired_summary.json").exists()


def test_flow_sim(tmp_path):
    cfg = tmp_path / "f.json"
    cfg.write_text(json.dumps({
        "dataset": {"kind": "synthetic_regression", "n": 16, "dim": 2, "split": 1.0},
        "network": {"hidden": [4]}, "clip": {"mode": "local", "R": 1.0}, "steps": 1,
    }))
    assert cli.main(["flow-sim", "--config", str(cfg), "--etas", "0.2,0.1", "--sigmas", "0.5,1",
                     "--seeds", "3", "--out", str(tmp_path / "o")]) == 0
    rows = (tmp_path / "o" / "flow_sigma_0.5.csv").read_text().splitlines()
    assert rows[0] == "eta,seed,distance,flow_loss,discrete_loss" and len(rows) == 7
    s = json.loads((tmp_path / "o" / "flow_summary.json").read_text())
    assert len(s["studies"]) == 2 and len(s["endpoint_spread"]) == 2
