"""Command-line workflow end to end on a desk-scale configuration."""
import json

import pandas as pd
import pytest


def _run(*argv):
    from eidoslab.cli import main

    return main([str(a) for a in argv])


def _stderr_json(capsys):
    lines = [ln for ln in capsys.readouterr().err.splitlines() if ln.startswith("{")]
    return json.loads(lines[-1])


# ---------------------------------------------------------------------------
# synth
# ---------------------------------------------------------------------------

def test_reproducible(tmp_path):
    for name in ("a", "b"):
        assert _run("synth", "--kind", "sine", "--count", 10, "--length", 64, "--seed", 7,
                    "--out", tmp_path / name) == 0
    a = (tmp_path / "a" / "dataset.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "dataset.jsonl").read_bytes()
    assert len(a.splitlines()) == 10


def test_cauker_reproducible(tmp_path):
    for name in ("a", "b"):
        assert _run("synth", "--kind", "cauker", "--count", 5, "--length", 32, "--seed", 1,
                    "--out", tmp_path / name) == 0
    assert (tmp_path / "a" / "dataset.jsonl").read_bytes() == (tmp_path / "b" / "dataset.jsonl").read_bytes()


def test_writes_config_manifest_and_summary(tmp_path):
    from eidoslab.manifest import load_manifest
    from eidoslab.run_summary import load_last_run

    out = tmp_path / "run"
    assert _run("synth", "--kind", "trend", "--count", 3, "--length", 20, "--out", out) == 0
    resolved = json.loads((out / "resolved_config.json").read_text(encoding="utf-8"))
    assert resolved["data"]["kind"] == "trend"
    entry = load_manifest(out)["commands"]["synth"]
    assert entry["status"] == "success"
    assert "dataset.jsonl" in entry["artifacts"]
    last = load_last_run(out)
    assert last.series == 3 and last.points == 60
    assert not (out / ".lock").exists()


def test_empty_spec_exits_2(tmp_path, capsys):
    from eidoslab.manifest import load_manifest

    out = tmp_path / "run"
    assert _run("synth", "--count", 0, "--out", out) == 2
    err = _stderr_json(capsys)
    assert err["error"] == "ConfigError"
    assert "empty generator spec" in err["message"]
    assert load_manifest(out)["commands"]["synth"]["status"] == "error"


def test_locked_run_dir(tmp_path, capsys):
    out = tmp_path / "run"
    out.mkdir()
    (out / ".lock").write_text("train pid=1", encoding="utf-8")
    assert _run("synth", "--out", out) == 2
    assert _stderr_json(capsys)["error"] == "RunLockedError"


def test_unknown_config_key(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"model": {"depth": 3}}), encoding="utf-8")
    assert _run("synth", "--config", path, "--out", tmp_path / "run") == 2
    assert "model.depth" in _stderr_json(capsys)["message"]


def test_badly_typed_config_value(tmp_path, capsys):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"train": {"total_steps": "abc"}}), encoding="utf-8")
    assert _run("synth", "--config", path, "--out", tmp_path / "run") == 2
    err = _stderr_json(capsys)
    assert err["error"] == "ConfigError"
    assert "train.total_steps" in err["message"]


# ---------------------------------------------------------------------------
# Full workflow
# ---------------------------------------------------------------------------

def test_train_then_analyse(tiny_run_file, tmp_path):
    out = tmp_path / "run"
    common = ["--config", tiny_run_file, "--out", out]
    assert _run("synth", *common) == 0
    assert _run("train", *common) == 0
    assert (out / "checkpoint.eidos").exists()
    log_df = pd.read_csv(out / "train_log.csv")
    assert len(log_df) == 6

    assert _run("forecast", *common, "--horizon", 10, "--block", 4) == 0
    fc = pd.read_csv(out / "forecast.csv")
    assert fc.shape == (10, 10)

    assert _run("eval", *common) == 0
    summary = json.loads((out / "eval_summary.json").read_text(encoding="utf-8"))
    assert summary["tasks"] == 4
    assert set(summary["aggregates"]) == {"mase", "crps", "wql"}
    assert (out / "eval_report.xlsx").exists()

    worse = tmp_path / "worse"
    worse.mkdir()
    rows = pd.read_csv(out / "eval_tasks.csv")
    rows["mase"] = rows["mase"] * 2.0
    rows.to_csv(worse / "eval_tasks.csv", index=False)
    assert _run("eval", *common, "--compare", worse) == 0
    ranking = pd.read_csv(out / "eval_compare.csv")
    mase_rank = ranking[ranking["metric"] == "mase"].set_index("run")["avg_rank"]
    assert mase_rank[str(worse)] == 2.0

    assert _run("noise", *common, "--kind", "gaussian") == 0
    noise = pd.read_csv(out / "noise_gaussian.csv")
    assert len(noise) == 5
    assert noise["relative_crps"].iloc[0] == 1.0

    assert _run("probe", *common, "--kind", "trend") == 0
    probe = pd.read_csv(out / "probe_trend.csv")
    assert probe["layer"].tolist() == [0, 1, 2]
    assert (out / "probe_trend.svg").exists()

    assert _run("steer", *common, "--kind", "trend", "--alphas", "0.2,0.5") == 0
    steer = pd.read_csv(out / "steer_trend.csv")
    assert sorted(steer["alpha"].unique()) == [-0.5, -0.2, 0.0, 0.2, 0.5]
    assert (out / "steer_trend.svg").exists()

    from eidoslab.manifest import load_manifest

    commands = load_manifest(out)["commands"]
    assert all(commands[c]["status"] == "success"
               for c in ("synth", "train", "forecast", "eval", "noise", "probe", "steer"))


def test_resolved_config_is_reused(tiny_run_file, tmp_path):
    out = tmp_path / "run"
    assert _run("synth", "--config", tiny_run_file, "--out", out) == 0
    assert _run("train", "--out", out, "--steps", 2) == 0
    resolved = json.loads((out / "resolved_config.json").read_text(encoding="utf-8"))
    assert resolved["train"]["total_steps"] == 2
    assert resolved["model"]["d_model"] == 16

    from eidoslab.run_summary import load_last_run

    assert load_last_run(out).command == "train"
    assert load_last_run(out).steps == 2
    synth = load_last_run(out, "synth")
    assert synth.series > 0 and synth.config_hash


def test_hash_mismatch(tiny_run_file, tmp_path, capsys):
    out = tmp_path / "run"
    assert _run("train", "--config", tiny_run_file, "--out", out, "--steps", 1) == 0
    other = json.loads(tiny_run_file.read_text(encoding="utf-8"))
    other["model"]["horizon"] = 6
    other_path = tmp_path / "other.json"
    other_path.write_text(json.dumps(other), encoding="utf-8")
    capsys.readouterr()
    assert _run("eval", "--config", other_path, "--out", out) == 2
    err = _stderr_json(capsys)
    assert err["error"] == "HashMismatchError"
    assert err["checkpoint_hash"] != err["config_hash"]


def test_missing_checkpoint(tiny_run_file, tmp_path, capsys):
    assert _run("eval", "--config", tiny_run_file, "--out", tmp_path / "empty") == 2
    assert _stderr_json(capsys)["error"] == "FileNotFoundError"


@pytest.mark.parametrize("command", ["synth", "train", "forecast", "eval", "noise", "probe", "steer"])
def test_every_command_has_a_handler(command):
    from eidoslab.cli import COMMANDS, HANDLERS, build_parser

    assert command in COMMANDS and command in HANDLERS
    args = build_parser().parse_args([command])
    assert args.command == command
