"""Write evaluation reports to CSV, JSON and Excel."""
from __future__ import annotations

import json
import logging
import math
import tempfile
from datetime import datetime
from pathlib import Path

import pandas as pd

from .metrics import EvalReport

log = logging.getLogger(__name__)


def _json_safe(value):
    if isinstance(value, float) and not math.isfinite(value):
        return None
    if isinstance(value, dict):
        return {k: _json_safe(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_safe(v) for v in value]
    return value


def write_json_atomic(path: Path | str, payload: dict) -> Path:
    """Temp file in the target folder, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
    with open(fd, "w", encoding="utf-8") as f:
        json.dump(_json_safe(payload), f, indent=2, sort_keys=True)
    Path(tmp).replace(path)
    return path


def write_eval_tasks(report: EvalReport, path: Path | str) -> Path:
    """One row per task."""
    path = Path(path)
    report.rows.to_csv(path, index=False)
    return path


def write_eval_summary(report: EvalReport, path: Path | str, config_hash: str) -> Path:
    return write_json_atomic(path, {**report.summary(), "config_hash": config_hash})


def export_eval_excel(report: EvalReport, path: Path | str, extra: dict | None = None) -> Path:
    """Workbook with sheets:
    - tasks: per-task metrics and ratios
    - aggregates: geometric means and exclusion counts
    - _meta: export metadata
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    agg = pd.DataFrame([
        {"metric": k, "geo_mean_ratio": v, "excluded": report.excluded.get(k, 0)}
        for k, v in report.aggregates.items()
    ])
    with pd.ExcelWriter(path, engine="openpyxl") as writer:
        report.rows.to_excel(writer, sheet_name="tasks", index=False)
        agg.to_excel(writer, sheet_name="aggregates", index=False)

        meta = pd.DataFrame([{
            "exported_at": datetime.now().isoformat(),
            "tasks": len(report.rows),
            **{k: str(v) for k, v in {**report.metadata, **(extra or {})}.items()},
        }])
        meta.to_excel(writer, sheet_name="_meta", index=False)

    log.info("Exported to: %s", path)
    return path


def write_table(df: pd.DataFrame, path: Path | str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    df.to_csv(path, index=False)
    return path
