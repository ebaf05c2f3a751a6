"""Held-out evaluation, noise robustness sweep and report export."""
import json
import math

import numpy as np
import pytest


@pytest.fixture()
def eval_section():
    from eidoslab.run_config import EvalSection

    return EvalSection(kind="sine", count=4, length=40, context_length=32, horizon=8, excel=True)


@pytest.fixture()
def tasks(eval_section):
    from eidoslab.evaluate import build_eval_tasks

    return build_eval_tasks(eval_section)


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------

def test_split(tasks):
    assert len(tasks) == 4
    assert all(t.context.size == 32 and t.truth.size == 8 for t in tasks)
    assert all(t.season_m >= 1 for t in tasks)


def test_holdout_seed_is_deterministic(eval_section):
    from eidoslab.evaluate import build_eval_tasks

    a, b = build_eval_tasks(eval_section), build_eval_tasks(eval_section)
    assert all(np.array_equal(x.context, y.context) for x, y in zip(a, b))
    other = build_eval_tasks(eval_section, seed=eval_section.holdout_seed + 1)
    assert not np.array_equal(a[0].context, other[0].context)


def test_short_length_is_extended(eval_section, caplog):
    from eidoslab.evaluate import build_eval_tasks

    eval_section.length = 10
    out = build_eval_tasks(eval_section)
    assert out[0].context.size == 32
    assert "generating" in caplog.text


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

def test_report_rows_and_aggregates(tiny_model, tasks, eval_section):
    from eidoslab.evaluate import evaluate_model

    report = evaluate_model(tiny_model, tasks, eval_section, {"label": "tiny"}, workers=2, progress=False)
    assert len(report.rows) == 4
    assert report.rows["task_id"].tolist() == [t.task_id for t in tasks]
    for col in ("mase", "crps", "crps_raw", "wql", "base_mase", "base_crps", "base_wql", "crossing_rate",
                "mase_ratio", "crps_ratio", "wql_ratio"):
        assert col in report.rows
    assert set(report.aggregates) == {"mase", "crps", "wql"}
    assert report.metadata["model_hash"] == tiny_model.cfg.hash()
    assert report.summary()["tasks"] == 4


def test_worker_count_does_not_change_rows(tiny_model, tasks, eval_section):
    from eidoslab.evaluate import evaluate_model

    a = evaluate_model(tiny_model, tasks, eval_section, workers=1, progress=False)
    b = evaluate_model(tiny_model, tasks, eval_section, workers=4, progress=False)
    np.testing.assert_array_equal(a.rows["crps_raw"].to_numpy(), b.rows["crps_raw"].to_numpy())


def test_horizon_mismatch(tiny_model, tasks, eval_section):
    from eidoslab.errors import WindowError
    from eidoslab.evaluate import evaluate_model

    eval_section.horizon = 6
    with pytest.raises(WindowError):
        evaluate_model(tiny_model, tasks, eval_section, progress=False)


def test_no_tasks(tiny_model, eval_section):
    from eidoslab.errors import EmptyReportError
    from eidoslab.evaluate import evaluate_model

    with pytest.raises(EmptyReportError):
        evaluate_model(tiny_model, [], eval_section, progress=False)


# ---------------------------------------------------------------------------
# Noise sweep
# ---------------------------------------------------------------------------

def test_default_gaussian_grid(tiny_model, tasks, eval_section):
    from eidoslab.config import GAUSSIAN_LEVELS
    from eidoslab.evaluate import noise_bench

    table = noise_bench(tiny_model, tasks, "gaussian", GAUSSIAN_LEVELS, 42, eval_section, progress=False)
    assert len(table) == 5
    assert table["level"].tolist() == list(GAUSSIAN_LEVELS)
    assert table["relative_crps"].iloc[0] == 1.0
    assert list(table.columns) == ["level", "crps", "relative_crps", "mase", "relative_mase", "excluded", "tasks"]


def test_impulse_sweep_is_reproducible(tiny_model, tasks, eval_section):
    from eidoslab.evaluate import noise_bench

    a = noise_bench(tiny_model, tasks, "impulse", [0.0, 0.2], 7, eval_section, progress=False)
    b = noise_bench(tiny_model, tasks, "impulse", [0.0, 0.2], 7, eval_section, progress=False)
    assert a["crps"].tolist() == b["crps"].tolist()


def test_levels_share_the_same_tasks(tiny_model, tasks, eval_section, monkeypatch):
    from eidoslab import evaluate

    def scripted(model, task, index, kind, level, seed, section):
        if index == 1 and level > 0:
            return math.nan, math.nan
        return 1.0 + level + index, 1.0

    monkeypatch.setattr(evaluate, "_noisy_scores", scripted)
    table = evaluate.noise_bench(tiny_model, tasks[:3], "gaussian", [0.0, 0.5], 42, eval_section,
                                 workers=1, progress=False)
    assert table["excluded"].tolist() == [0, 1]
    assert table["tasks"].tolist() == [2, 2]
    assert table["crps"].iloc[0] == pytest.approx(math.sqrt(1.0 * 3.0))
    assert table["relative_crps"].iloc[1] == pytest.approx(math.sqrt(1.5 * 3.5 / 3.0))


def test_requires_clean_level(tiny_model, tasks, eval_section):
    from eidoslab.errors import ConfigError
    from eidoslab.evaluate import noise_bench

    with pytest.raises(ConfigError):
        noise_bench(tiny_model, tasks, "gaussian", [0.2, 0.4], 42, eval_section, progress=False)
    with pytest.raises(ConfigError):
        noise_bench(tiny_model, tasks, "pink", [0.0], 42, eval_section, progress=False)


# ---------------------------------------------------------------------------
# Export
# ---------------------------------------------------------------------------

def _report():
    from eidoslab.metrics import aggregate

    rows = [{"task_id": "a", "mase": 0.5, "base_mase": 1.0, "crps": math.nan, "base_crps": 1.0},
            {"task_id": "b", "mase": 2.0, "base_mase": 1.0, "crps": 0.4, "base_crps": 0.8}]
    return aggregate(rows, {"model_hash": "m0"})


def test_summary_json_has_null_for_nan(tmp_path):
    from eidoslab.export import write_eval_summary

    report = _report()
    report.aggregates["wql"] = math.nan
    path = write_eval_summary(report, tmp_path / "s.json", "cfg0")
    data = json.loads(path.read_text(encoding="utf-8"))
    assert data["config_hash"] == "cfg0"
    assert data["aggregates"]["wql"] is None
    assert data["excluded"]["crps"] == 1
    assert data["model_hash"] == "m0"


def test_excel_sheets(tmp_path):
    import pandas as pd

    from eidoslab.export import export_eval_excel

    path = export_eval_excel(_report(), tmp_path / "r.xlsx", {"config_hash": "cfg0"})
    sheets = pd.read_excel(path, sheet_name=None)
    assert set(sheets) == {"tasks", "aggregates", "_meta"}
    assert len(sheets["tasks"]) == 2
    assert sheets["_meta"]["config_hash"].iloc[0] == "cfg0"


def test_tasks_csv(tmp_path):
    import pandas as pd

    from eidoslab.export import write_eval_tasks

    path = write_eval_tasks(_report(), tmp_path / "t.csv")
    assert pd.read_csv(path)["task_id"].tolist() == ["a", "b"]
