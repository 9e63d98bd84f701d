"""
Pytest configuration and fixtures
"""
import json
import os
from pathlib import Path

import numpy as np
import pytest

from inode_lab.core.config import settings
from inode_lab.models.latent_ode import LatentODE
from inode_lab.schemas.dataset import GenConfig
from inode_lab.schemas.model import VariantConfig
from inode_lab.schemas.training import EvalConfig, TrainConfig

# Slow tests train real models; opt in with INODE_LAB_SLOW_TESTS=1.
RUN_SLOW = os.getenv("INODE_LAB_SLOW_TESTS") == "1"


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training runs (INODE_LAB_SLOW_TESTS=1)")


def pytest_collection_modifyitems(config, items):
    if RUN_SLOW:
        return
    skip_slow = pytest.mark.skip(reason="set INODE_LAB_SLOW_TESTS=1 to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture(autouse=True)
def _no_log_files(monkeypatch):
    """Tests never write to the shared log directory"""
    monkeypatch.setattr(settings, "LOG_TO_FILE", False)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def small_gen() -> GenConfig:
    """A few short sinusoid sequences"""
    return GenConfig(n_train=6, n_val=3, n_test=3, n_t=12, dt=0.1, sigma=0.1, seed=7)


@pytest.fixture
def tiny_variant() -> VariantConfig:
    """INODE with a modulator and very small networks"""
    return VariantConfig(variant="inode", q_x=2, q_c=2, t_in=3, t_inv=6, hidden=5, ode_layers=1)


@pytest.fixture
def tiny_model(tiny_variant: VariantConfig) -> LatentODE:
    return LatentODE(tiny_variant, data_dim=1)


@pytest.fixture
def fast_train() -> TrainConfig:
    return TrainConfig(batch_size=3, max_epochs=2, seed=3, patience=5)


@pytest.fixture
def fast_eval() -> EvalConfig:
    return EvalConfig(mc_samples=3, seed=0, similarity_n_seq=2, similarity_n_t=4)


@pytest.fixture
def experiment_data() -> dict:
    """Smallest end-to-end experiment config"""
    return {
        "dataset": {
            "kind": "sinusoid",
            "gen": {"n_train": 6, "n_val": 3, "n_test": 3, "n_t": 12, "seed": 11},
        },
        "model": {"variant": "inode", "q_x": 2, "q_c": 2, "t_in": 3, "t_inv": 6, "hidden": 5, "ode_layers": 1},
        "train": {"batch_size": 3, "max_epochs": 2, "seed": 0},
        "eval": {"mc_samples": 2, "similarity_n_seq": 2, "similarity_n_t": 4},
    }


@pytest.fixture
def experiment_file(tmp_path: Path, experiment_data: dict) -> Path:
    data = dict(experiment_data)
    data["output_dir"] = str(tmp_path / "runs")
    path = tmp_path / "experiment.json"
    path.write_text(json.dumps(data), encoding="utf-8")
    return path
