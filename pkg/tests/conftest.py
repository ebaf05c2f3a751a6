"""
Shared test fixtures - tiny model configs, seeded models and run configs.
"""
from __future__ import annotations

import numpy as np
import pytest


# ---------------------------------------------------------------------------
# Model
# ---------------------------------------------------------------------------
@pytest.fixture()
def tiny_cfg():
    """2 layers, d=16, 2 heads, l=4, 9 quantiles."""
    from eidoslab.backbone import BackboneConfig
    from eidoslab.model import ModelConfig

    return ModelConfig(
        backbone=BackboneConfig(n_layers=2, d_model=16, d_intermediate=32, n_heads=2),
        horizon=4, d_ff=8, glu_width=8, head_hidden=8,
    )


@pytest.fixture()
def tiny_model(tiny_cfg):
    from eidoslab.model import EidosModel
    return EidosModel.init(tiny_cfg, seed=0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)


# ---------------------------------------------------------------------------
# Run configuration (desk-scale everything)
# ---------------------------------------------------------------------------
TINY_RUN = {
    "seed": 3,
    "model": {"preset": "toy", "n_layers": 2, "d_model": 16, "d_intermediate": 32, "n_heads": 2,
              "horizon": 4, "d_ff": 8, "glu_width": 8, "head_hidden": 8},
    "train": {"total_steps": 6, "batch_size": 4, "micro_batch": 2, "context_length": 24,
              "log_every": 2, "checkpoint_every": 3},
    "data": {"kind": "sine+trend", "count": 8, "length": 64},
    "eval": {"kind": "sine", "count": 4, "length": 40, "context_length": 32, "horizon": 8,
             "excel": True},
    "probe": {"count": 6, "length": 32, "batch": 4, "context_length": 24, "horizon": 8},
}


@pytest.fixture()
def tiny_run(tmp_path):
    from eidoslab.run_config import from_dict

    data = {**TINY_RUN, "out": str(tmp_path / "run")}
    return from_dict(data).validate()


@pytest.fixture()
def tiny_run_file(tmp_path):
    """TINY_RUN written as a JSON config file."""
    import json

    path = tmp_path / "tiny.json"
    path.write_text(json.dumps(TINY_RUN), encoding="utf-8")
    return path
