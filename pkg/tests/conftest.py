"""Pytest configuration and shared fixtures."""

from __future__ import annotations

import copy
from pathlib import Path
from typing import Any

import numpy as np
import pytest
import yaml

from vmtsim.config import SimConfig, config_from_dict
from vmtsim.core import Key
from vmtsim.traffic import Trace

# Small enough for a run to finish in well under a second
SMALL_CONFIG: dict[str, Any] = {
    "seed": 7,
    "duration-ns": 100_000,
    "pmu-count": 4,
    "vmts": [
        {
            "id": 0,
            "pmus": 2,
            "rules": {"count": 100, "histogram": {24: 1.0}},
        }
    ],
    "traffic": {"flows": 20, "rate-pps": 1.0e6},
}


@pytest.fixture
def small_config_data() -> dict[str, Any]:
    """A fresh copy of the small configuration mapping."""
    return copy.deepcopy(SMALL_CONFIG)


@pytest.fixture
def small_config(small_config_data) -> SimConfig:
    """A validated single-VMT configuration."""
    return config_from_dict(small_config_data)


@pytest.fixture
def out_dir(tmp_path: Path) -> Path:
    """An output directory under tmp_path."""
    path = tmp_path / "out"
    path.mkdir()
    return path


@pytest.fixture
def config_file(tmp_path: Path, small_config_data) -> Path:
    """The small configuration written as YAML."""
    path = tmp_path / "config.yaml"
    path.write_text(yaml.safe_dump(small_config_data), encoding="utf-8")
    return path


@pytest.fixture
def single_key_trace():
    """Factory for traces whose packets all belong to flow 0 with one key."""

    def make(times_ns: list[int], duration_ns: int, key: int = 0x0A000001, width: int = 4) -> Trace:
        return Trace(
            times_ns=np.asarray(times_ns, dtype=np.int64),
            flow_ids=np.zeros(len(times_ns), dtype=np.int64),
            keys={0: Key.from_int(key, width)},
            duration_ns=duration_ns,
        )

    return make
