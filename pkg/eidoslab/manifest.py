"""
Run-directory manifest and lock.

The manifest records which artifacts each command produced, with the config hash
that produced them. The lock file marks a run directory as owned by one command.
"""
from __future__ import annotations
import json
import logging
import os
from contextlib import contextmanager
from datetime import datetime, timezone
from pathlib import Path

from .errors import RunLockedError

log = logging.getLogger(__name__)

# Bump when the manifest layout changes
MANIFEST_VERSION = 1

MANIFEST_FILENAME = "_manifest.json"
LOCK_FILENAME = ".lock"


def load_manifest(run_dir: Path) -> dict:
    """Load the manifest for a run directory (empty dict if absent or unreadable)."""
    path = Path(run_dir) / MANIFEST_FILENAME
    if not path.exists():
        return {}
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, OSError):
        log.warning("Unreadable manifest at %s, starting fresh", path)
        return {}


def save_manifest(run_dir: Path, manifest: dict) -> None:
    from .export import write_json_atomic

    try:
        write_json_atomic(Path(run_dir) / MANIFEST_FILENAME, manifest)
    except OSError as exc:
        log.error("Could not write manifest in %s: %s", run_dir, exc)


def record_artifacts(manifest: dict, command: str, artifacts: list[Path],
                     config_hash: str, model_hash: str | None = None) -> None:
    """Record the files a command produced."""
    manifest["version"] = MANIFEST_VERSION
    runs = manifest.setdefault("commands", {})
    runs[command] = {
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "config_hash": config_hash,
        "model_hash": model_hash,
        "artifacts": sorted(Path(a).name for a in artifacts),
        "status": "success",
    }


def record_error(manifest: dict, command: str, error_msg: str) -> None:
    manifest["version"] = MANIFEST_VERSION
    runs = manifest.setdefault("commands", {})
    runs[command] = {
        "finished_at": datetime.now(timezone.utc).isoformat(),
        "status": "error",
        "error_message": str(error_msg)[:500],
    }


@contextmanager
def run_lock(run_dir: Path, command: str):
    """Hold ``.lock`` in ``run_dir`` for the duration of a command."""
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    path = run_dir / LOCK_FILENAME
    try:
        fd = os.open(str(path), os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        owner = path.read_text(encoding="utf-8").strip() if path.exists() else "?"
        raise RunLockedError(f"{run_dir} is locked by another command ({owner}); remove {path} if stale")
    with os.fdopen(fd, "w", encoding="utf-8") as f:
        f.write(f"{command} pid={os.getpid()} {datetime.now(timezone.utc).isoformat()}")
    try:
        yield path
    finally:
        try:
            path.unlink()
        except FileNotFoundError:
            pass
