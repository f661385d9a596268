from __future__ import annotations

from dataclasses import dataclass
import json
from pathlib import Path

import numpy as np
import pytest
from loguru import logger

from flowfront.schemas.config import RunConfig, parse_config
from flowfront.services.pde_sim import GridSpec


@dataclass(frozen=True)
class LinearScalarModel:
    """dY = -a Y dt + sigma dW, observed directly with noise std s_meas."""

    a: float = 0.5
    sigma: float = 0.3
    s_meas: float = 0.2
    y_min: float = -np.inf

    @property
    def n(self) -> int:
        return 1

    def drift(self, Y: np.ndarray) -> np.ndarray:
        return -self.a * Y

    def jacobian(self, Y: np.ndarray) -> np.ndarray:
        return np.array([[-self.a]])


SMALL_CONFIG = {
    "grid": {"nx": 8, "ny": 16},
    "sim": {"dt_pde": 0.5, "T": 60.0, "sample_interval": 5.0, "noise": 0.002},
    "sensors": {"n_sensors": 5},
    "mle": {"multistart": 1, "max_evals": 60},
    "sweep": {
        "sample_intervals": [5.0],
        "noise_stds": [0.002],
        "sensor_counts": [5],
        "orders": [2, 4],
        "scenarios": [{"kind": "none"}],
    },
    "seed": 11,
}


@pytest.fixture
def linear_model() -> LinearScalarModel:
    return LinearScalarModel()


@pytest.fixture
def tiny_grid() -> GridSpec:
    return GridSpec(Lx=2.0, Ly=4.0, nx=2, ny=4)


@pytest.fixture
def small_doc() -> dict:
    return json.loads(json.dumps(SMALL_CONFIG))


@pytest.fixture
def small_config(small_doc) -> RunConfig:
    return parse_config(small_doc)


@pytest.fixture
def config_file(tmp_path: Path, small_doc) -> Path:
    path = tmp_path / "run.json"
    path.write_text(json.dumps(small_doc), encoding="utf-8")
    return path


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture
def caplog_loguru(caplog):
    """Route loguru records into pytest's caplog."""
    handler_id = logger.add(caplog.handler, format="{message}", level="DEBUG")
    yield caplog
    logger.remove(handler_id)
