"""Shared fixtures."""

import json
import os
import shutil
import tempfile

import pytest

from utils.models import PipelineConfig


TINY_CONFIG = {
    "model": {"vocab_size": 8, "seq_len": 4, "d_model": 8, "n_heads": 2, "d_ff": 16,
              "n_layers": 1, "n_classes": 2},
    "adapter": {"rank": 2, "n_keep": 4, "method": "decompose"},
    "pruning": {"mode": "unstructured", "sparsity": 0.5},
    "optimizer": {"epochs_stage1": 1, "epochs_stage3": 1, "batch_size": 32},
    "pretrain": {"max_epochs": 2, "min_accuracy": 0.0},
    "task": {"n_train": 256, "n_eval": 64},
}


@pytest.fixture
def temp_dir():
    """Create a temporary directory removed after the test."""
    path = tempfile.mkdtemp()
    yield path
    shutil.rmtree(path, ignore_errors=True)


@pytest.fixture
def tiny_config():
    """A pipeline config small enough to train in well under a second."""
    return PipelineConfig.from_dict(json.loads(json.dumps(TINY_CONFIG)))


@pytest.fixture
def tiny_config_path(temp_dir):
    """The tiny config written to a JSON file."""
    path = os.path.join(temp_dir, "config.json")
    with open(path, "w", encoding="utf-8") as f:
        json.dump(TINY_CONFIG, f)
    return path


@pytest.fixture(autouse=True)
def no_seed_override(monkeypatch):
    """Keep DSEE_SEED from leaking into seed-sensitive tests."""
    monkeypatch.delenv("DSEE_SEED", raising=False)
    monkeypatch.setattr("config.DSEE_SEED", None)
