from __future__ import annotations

import sys
from pathlib import Path

import pytest

PROJECT_ROOT = Path(__file__).resolve().parents[1]
if str(PROJECT_ROOT) not in sys.path:
    sys.path.insert(0, str(PROJECT_ROOT))

SETTINGS_ENV = (
    "CLUSTERSIM_CALIBRATION",
    "CLUSTERSIM_OUT_DIR",
    "CLUSTERSIM_SEED",
    "CLUSTERSIM_LOG_LEVEL",
    "CLUSTERSIM_OVERFLOW_TRAP",
    "CLUSTERSIM_DEADLOCK_CYCLES",
    "CLUSTERSIM_L1_BUDGET",
)


@pytest.fixture()
def clean_env(monkeypatch: pytest.MonkeyPatch) -> pytest.MonkeyPatch:
    """Drop every CLUSTERSIM_* variable so settings fall back to their defaults."""
    for name in SETTINGS_ENV:
        monkeypatch.delenv(name, raising=False)
    return monkeypatch


@pytest.fixture()
def project_root() -> Path:
    return PROJECT_ROOT
