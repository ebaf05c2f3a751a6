"""
Newline-delimited JSON dataset files.

One object per line: {"id": str, "freq": str, "season_m": int, "target": [float, ...]}.
Reading streams record by record; floats are written with repr precision so a
write/read roundtrip is value-identical.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .datagen import SeriesRecord
from .errors import NonFiniteError, ParseError

log = logging.getLogger(__name__)

REQUIRED_FIELDS = ("id", "target")


def _reject_constant(token: str):
    raise ValueError(f"non-finite value {token}")


def record_to_json(rec: SeriesRecord) -> str:
    return json.dumps(
        {"id": rec.id, "freq": rec.freq, "season_m": int(rec.season_m),
         "target": [float(v) for v in rec.target]},
        allow_nan=False, separators=(",", ":"),
    )


def write_jsonl(path: Path | str, records: Iterable[SeriesRecord]) -> int:
    """Write records, one per line. Returns the number written."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    n = 0
    with open(path, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(record_to_json(rec))
            f.write("\n")
            n += 1
    log.debug("Wrote %d records to %s", n, path)
    return n


def parse_record(line: str, line_no: int) -> SeriesRecord:
    try:
        obj = json.loads(line, parse_constant=_reject_constant)
    except ValueError as exc:
        raise ParseError(f"invalid JSON ({exc})", line_no) from exc
    if not isinstance(obj, dict):
        raise ParseError("record must be a JSON object", line_no)
    for name in REQUIRED_FIELDS:
        if name not in obj:
            raise ParseError(f"missing field '{name}'", line_no, name)
    target = obj["target"]
    if not isinstance(target, list) or not target:
        raise ParseError("'target' must be a non-empty list of numbers", line_no, "target")
    try:
        values = np.array(target, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ParseError(f"'target' has non-numeric entries ({exc})", line_no, "target") from exc
    if values.ndim != 1:
        raise ParseError("'target' must be one-dimensional", line_no, "target")
    if not np.all(np.isfinite(values)):
        raise NonFiniteError("'target' contains non-finite values", line_no, "target")
    season_m = obj.get("season_m", 1)
    if not isinstance(season_m, int) or isinstance(season_m, bool) or season_m < 1:
        raise ParseError(f"'season_m' must be a positive integer, got {season_m!r}", line_no, "season_m")
    return SeriesRecord(str(obj["id"]), str(obj.get("freq", "")), values, season_m)


def read_jsonl(path: Path | str) -> Iterator[SeriesRecord]:
    """Stream records; blank lines are skipped."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"dataset not found: {path}")
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            if not line.strip():
                continue
            yield parse_record(line, line_no)


def load_records(path: Path | str) -> list[SeriesRecord]:
    return list(read_jsonl(path))


def corpus_stats(records: Iterable[SeriesRecord]) -> tuple[int, int]:
    """(series count, total points)."""
    n = points = 0
    for rec in records:
        n += 1
        points += len(rec)
    return n, points
