"""
Single-file checkpoint container.

Layout:
    8 bytes   magic b"EIDOSCK\\0"
    uint32    format version (little-endian)
    uint64    header length in bytes
    header    UTF-8 JSON: model config, hashes, step, sampler RNG state, optimizer
              hyperparameters and a tensor table (name, shape, offset, count)
    payload   little-endian float64 values, tensors back to back

Writes go through a temp file + replace so a crash never leaves a torn file.
"""
from __future__ import annotations

import json
import logging
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import HashMismatchError, ParseError
from .model import EidosModel, ModelConfig, ModelParams
from .optim import OptimState

log = logging.getLogger(__name__)

MAGIC = b"EIDOSCK\x00"
FORMAT_VERSION = 1
_PREAMBLE = struct.Struct("<8sIQ")
_DTYPE = np.dtype("<f8")


@dataclass
class Checkpoint:
    model_config: ModelConfig
    params: dict[str, np.ndarray]
    optim: OptimState
    step: int = 0
    config_hash: str = ""
    rng_state: dict = field(default_factory=dict)
    extra: dict = field(default_factory=dict)

    @property
    def model_hash(self) -> str:
        return self.model_config.hash()

    def model(self) -> EidosModel:
        return EidosModel(self.model_config, ModelParams.from_arrays(self.params))

    def check_model_hash(self, expected: str) -> None:
        if expected != self.model_hash:
            raise HashMismatchError(self.model_hash, expected, "model")


def _tensor_table(arrays: Mapping[str, np.ndarray]) -> tuple[list[dict], list[np.ndarray]]:
    table, chunks, offset = [], [], 0
    for name, arr in arrays.items():
        flat = np.ascontiguousarray(arr, dtype=_DTYPE).reshape(-1)
        table.append({"name": name, "shape": list(np.shape(arr)), "offset": offset, "count": int(flat.size)})
        chunks.append(flat)
        offset += flat.size
    return table, chunks


def save_checkpoint(path: Path | str, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays: dict[str, np.ndarray] = {f"param/{k}": v for k, v in ckpt.params.items()}
    arrays.update({f"m/{k}": v for k, v in ckpt.optim.m.items()})
    arrays.update({f"v/{k}": v for k, v in ckpt.optim.v.items()})
    table, chunks = _tensor_table(arrays)
    header = {
        "format_version": FORMAT_VERSION,
        "model_config": ckpt.model_config.to_dict(),
        "model_hash": ckpt.model_hash,
        "config_hash": ckpt.config_hash,
        "step": int(ckpt.step),
        "rng_state": ckpt.rng_state,
        "optim": ckpt.optim.hyper(),
        "extra": ckpt.extra,
        "tensors": table,
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    fd, tmp = tempfile.mkstemp(dir=str(path.parent), suffix=".tmp")
    try:
        with open(fd, "wb") as f:
            f.write(_PREAMBLE.pack(MAGIC, FORMAT_VERSION, len(blob)))
            f.write(blob)
            for chunk in chunks:
                f.write(chunk.tobytes())
        Path(tmp).replace(path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    log.debug("Saved checkpoint step %d (%d tensors) to %s", ckpt.step, len(table), path)
    return path


def load_checkpoint(path: Path | str) -> Checkpoint:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    raw = path.read_bytes()
    if len(raw) < _PREAMBLE.size:
        raise ParseError(f"{path} is too short to be a checkpoint")
    magic, version, hlen = _PREAMBLE.unpack_from(raw, 0)
    if magic != MAGIC:
        raise ParseError(f"{path} is not an eidoslab checkpoint (bad magic)")
    if version != FORMAT_VERSION:
        raise ParseError(f"{path}: unsupported checkpoint version {version}")
    start = _PREAMBLE.size
    try:
        header = json.loads(raw[start:start + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ParseError(f"{path}: corrupt checkpoint header ({exc})") from exc
    payload = np.frombuffer(raw, dtype=_DTYPE, offset=start + hlen)

    params: dict[str, np.ndarray] = {}
    m: dict[str, np.ndarray] = {}
    v: dict[str, np.ndarray] = {}
    for entry in header["tensors"]:
        lo, n = entry["offset"], entry["count"]
        if lo + n > payload.size:
            raise ParseError(f"{path}: tensor {entry['name']} runs past the payload")
        arr = payload[lo:lo + n].astype(np.float64).reshape(entry["shape"])
        kind, name = entry["name"].split("/", 1)
        {"param": params, "m": m, "v": v}[kind][name] = arr

    hyper = dict(header["optim"])
    optim = OptimState(**hyper, m=m, v=v)
    cfg = ModelConfig.from_dict(header["model_config"])
    if header.get("model_hash") and header["model_hash"] != cfg.hash():
        raise HashMismatchError(header["model_hash"], cfg.hash(), "model")
    return Checkpoint(model_config=cfg, params=params, optim=optim, step=int(header["step"]),
                      config_hash=header.get("config_hash", ""), rng_state=header.get("rng_state", {}),
                      extra=header.get("extra", {}))
