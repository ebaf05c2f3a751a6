"""
Command run summary.

``_run_summary.json`` keeps the most recent ``RunMetrics`` per command plus a
short history, so ``eval`` after ``train`` does not erase the training record.
"""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path

log = logging.getLogger(__name__)

SUMMARY_FILENAME = "_run_summary.json"
HISTORY_LIMIT = 50


@dataclass
class RunMetrics:
    command: str = ""
    config_hash: str = ""
    started_at: str = ""
    duration_seconds: float = 0.0
    series: int = 0
    points: int = 0
    steps: int = 0
    tasks: int = 0
    excluded: int = 0
    artifacts: int = 0
    counts: dict[str, int] = field(default_factory=dict)
    _t0: float = field(default=0.0, repr=False, compare=False)

    def start(self) -> None:
        self.started_at = datetime.now(timezone.utc).isoformat(timespec="seconds")
        self._t0 = time.perf_counter()

    def finish(self) -> None:
        if self._t0:
            self.duration_seconds = round(time.perf_counter() - self._t0, 2)

    def add_count(self, name: str, count: int = 1) -> None:
        self.counts[name] = self.counts.get(name, 0) + count

    def to_dict(self) -> dict:
        return {k: v for k, v in asdict(self).items() if not k.startswith("_")}

    def summary_line(self) -> str:
        parts = [f"{self.command}:"]
        if self.series:
            parts.append(f"{self.series} series, {self.points} points.")
        if self.steps:
            parts.append(f"{self.steps} steps.")
        if self.tasks:
            parts.append(f"{self.tasks} tasks ({self.excluded} excluded).")
        if self.counts:
            parts.append(", ".join(f"{v} {k}" for k, v in sorted(self.counts.items())) + ".")
        parts.append(f"{self.artifacts} artifacts in {self.duration_seconds}s")
        return " ".join(parts)


def _read(path: Path) -> dict:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        return {}
    except (json.JSONDecodeError, OSError) as exc:
        log.warning("Ignoring unreadable %s: %s", path.name, exc)
        return {}
    return data if isinstance(data, dict) else {}


def _from_dict(data: dict) -> RunMetrics:
    known = {k: v for k, v in data.items() if k in RunMetrics.__dataclass_fields__ and not k.startswith("_")}
    return RunMetrics(**known)


def save_run_summary(run_dir: Path, metrics: RunMetrics) -> Path:
    """Record ``metrics`` as the latest run of its command and append it to the history."""
    from .export import write_json_atomic

    path = Path(run_dir) / SUMMARY_FILENAME
    data = _read(path)
    entry = metrics.to_dict()
    latest = dict(data.get("latest", {}))
    latest[metrics.command] = entry
    history = (list(data.get("history", [])) + [entry])[-HISTORY_LIMIT:]
    return write_json_atomic(path, {"last_command": metrics.command, "latest": latest, "history": history})


def load_last_run(run_dir: Path, command: str | None = None) -> RunMetrics | None:
    """Latest metrics for ``command`` (default: whichever command ran last), or None."""
    data = _read(Path(run_dir) / SUMMARY_FILENAME)
    name = command or data.get("last_command")
    entry = data.get("latest", {}).get(name) if name else None
    if not isinstance(entry, dict):
        return None
    try:
        return _from_dict(entry)
    except TypeError:
        return None
