from __future__ import annotations
from pathlib import Path

DATASET_NAME = "dataset.jsonl"
CHECKPOINT_NAME = "checkpoint.eidos"
TRAIN_LOG_NAME = "train_log.csv"
FORECAST_NAME = "forecast.csv"
EVAL_TASKS_NAME = "eval_tasks.csv"
EVAL_SUMMARY_NAME = "eval_summary.json"
EVAL_EXCEL_NAME = "eval_report.xlsx"
EVAL_COMPARE_NAME = "eval_compare.csv"
NOISE_NAME = "noise_{kind}.csv"
PROBE_NAME = "probe_{kind}.{ext}"
STEER_NAME = "steer_{kind}.{ext}"


def output_paths_for_run(run_dir: Path | str) -> dict[str, Path]:
    folder = Path(run_dir)
    folder.mkdir(parents=True, exist_ok=True)
    return {
        "folder": folder,
        "dataset": folder / DATASET_NAME,
        "checkpoint": folder / CHECKPOINT_NAME,
        "train_log": folder / TRAIN_LOG_NAME,
        "forecast": folder / FORECAST_NAME,
        "eval_tasks": folder / EVAL_TASKS_NAME,
        "eval_summary": folder / EVAL_SUMMARY_NAME,
        "eval_excel": folder / EVAL_EXCEL_NAME,
        "eval_compare": folder / EVAL_COMPARE_NAME,
    }


def noise_path(run_dir: Path | str, kind: str) -> Path:
    return Path(run_dir) / NOISE_NAME.format(kind=kind)


def probe_path(run_dir: Path | str, kind: str, ext: str = "csv") -> Path:
    return Path(run_dir) / PROBE_NAME.format(kind=kind, ext=ext)


def steer_path(run_dir: Path | str, kind: str, ext: str = "csv") -> Path:
    return Path(run_dir) / STEER_NAME.format(kind=kind, ext=ext)
