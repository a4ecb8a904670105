from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

from .errors import FormatError

PROJECT_ROOT = Path(__file__).resolve().parents[1]
DEFAULT_CALIBRATION_PATH = PROJECT_ROOT / "data" / "calibration.json"
CALIBRATION_VERSION = 1


def _env_bool(name: str, default: bool) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "y", "on"}


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    return int(value)


@dataclass(slots=True)
class Settings:
    calibration_path: Path
    out_dir: Path
    seed: int
    log_level: str
    overflow_trap: bool
    deadlock_cycles: int
    l1_budget: int


def load_settings() -> Settings:
    return Settings(
        calibration_path=Path(os.getenv("CLUSTERSIM_CALIBRATION", str(DEFAULT_CALIBRATION_PATH))),
        out_dir=Path(os.getenv("CLUSTERSIM_OUT_DIR", "out")),
        seed=_env_int("CLUSTERSIM_SEED", 0),
        log_level=os.getenv("CLUSTERSIM_LOG_LEVEL", "WARNING").upper(),
        overflow_trap=_env_bool("CLUSTERSIM_OVERFLOW_TRAP", True),
        deadlock_cycles=_env_int("CLUSTERSIM_DEADLOCK_CYCLES", 10000),
        l1_budget=_env_int("CLUSTERSIM_L1_BUDGET", 128 * 1024),
    )


# Calibration. Every measured constant lives here and in data/calibration.json.


@dataclass(slots=True)
class RbeCalibration:
    clock_hz: float = 420e6
    kout_cycles_per_weight_bit: int = 32
    compute_pass_overhead_cycles: int = 39
    streamer_words: int = 9
    input_planes_per_pass: int = 4
    load_latency_cycles: int = 2
    normquant_cycles_per_block: int = 2
    streamout_latency_cycles: int = 2
    job_setup_cycles: int = 4
    activity: float = 0.85


@dataclass(slots=True)
class ClusterCalibration:
    cores: int = 16
    tcdm_banks: int = 32
    tcdm_bytes: int = 128 * 1024
    l2_bytes: int = 1024 * 1024
    dma_bytes_per_cycle: int = 8
    dma_setup_cycles: int = 10
    branch_penalty_cycles: int = 1


@dataclass(slots=True)
class TilerCalibration:
    l1_budget: int = 128 * 1024
    l3_bytes_per_cycle: float = 1.0
    l3_latency_cycles: int = 100
    software_cores: int = 16


@dataclass(slots=True)
class PowerCalibration:
    anchor_vdd: float = 0.8
    anchor_freq_hz: float = 420e6
    anchor_power_mw: float = 123.0
    dynamic_fraction: float = 0.946
    low_vdd: float = 0.5
    low_freq_hz: float = 100e6
    dynamic_ratio: float = 10.7
    leakage_ratio: float = 3.5
    fbb_leakage_per_volt: float = 2.0
    activity: dict[str, float] = field(
        default_factory=lambda: {"matmul": 1.0, "rbe": 0.85, "dma": 0.15, "idle": 0.05}
    )


@dataclass(slots=True)
class AbbCalibration:
    f_high_hz: float = 420e6
    v_high: float = 0.8
    f_low_hz: float = 100e6
    v_low: float = 0.5
    alpha: float = 1.3
    probe_freq_hz: float = 400e6
    min_vdd_no_abb: float = 0.74
    min_vdd_abb: float = 0.65
    vbb_step: float = 0.05
    vbb_max: float = 0.45
    settle_cycles: int = 310
    relax_window_cycles: int = 5000
    ocm_margin: float = 0.05
    monitored_fraction: float = 0.01
    paths: int = 20000
    path_sigma: float = 0.15
    population_seed: int = 7
    phase_reach: dict[str, float] = field(
        default_factory=lambda: {"rbe": 0.80, "marshal": 0.70, "high": 0.87}
    )
    phase_activity: dict[str, float] = field(
        default_factory=lambda: {"probe": 0.3, "rbe": 0.3, "marshal": 0.1, "high": 0.3}
    )
    phase_power_activity: dict[str, str] = field(
        default_factory=lambda: {"probe": "matmul", "rbe": "rbe", "marshal": "dma", "high": "matmul"}
    )


@dataclass(slots=True)
class Calibration:
    version: int = CALIBRATION_VERSION
    rbe: RbeCalibration = field(default_factory=RbeCalibration)
    cluster: ClusterCalibration = field(default_factory=ClusterCalibration)
    tiler: TilerCalibration = field(default_factory=TilerCalibration)
    power: PowerCalibration = field(default_factory=PowerCalibration)
    abb: AbbCalibration = field(default_factory=AbbCalibration)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


_SECTIONS: dict[str, type] = {
    "rbe": RbeCalibration,
    "cluster": ClusterCalibration,
    "tiler": TilerCalibration,
    "power": PowerCalibration,
    "abb": AbbCalibration,
}


def default_calibration() -> Calibration:
    return Calibration()


def _build_section(name: str, cls: type, payload: Any) -> Any:
    if not isinstance(payload, dict):
        raise FormatError(f"calibration section {name!r} must be an object")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(payload) - set(known))
    if unknown:
        raise FormatError(f"calibration section {name!r} has unknown keys: {', '.join(unknown)}")
    defaults = cls()
    values: dict[str, Any] = {}
    for key, spec in known.items():
        if key not in payload:
            continue
        value = payload[key]
        current = getattr(defaults, key)
        if isinstance(current, dict):
            if not isinstance(value, dict):
                raise FormatError(f"calibration {name}.{key} must be an object")
            merged = dict(current)
            merged.update(value)
            value = merged
        elif isinstance(current, bool) or not isinstance(value, (int, float)):
            raise FormatError(f"calibration {name}.{key} must be numeric")
        elif isinstance(current, int) and not isinstance(current, bool):
            if float(value) != int(value):
                raise FormatError(f"calibration {name}.{key} must be an integer")
            value = int(value)
        else:
            value = float(value)
        values[key] = value
    return cls(**values)


_FRACTIONS = {("rbe", "activity"), ("power", "dynamic_fraction"), ("abb", "monitored_fraction")}


def check_ranges(calib: Calibration) -> Calibration:
    problems: list[str] = []
    for name in _SECTIONS:
        section = getattr(calib, name)
        for spec in fields(section):
            value = getattr(section, spec.name)
            if isinstance(value, dict):
                continue
            if value < 0:
                problems.append(f"{name}.{spec.name}={value} must be non-negative")
            elif (name, spec.name) in _FRACTIONS and not 0 < value <= 1:
                problems.append(f"{name}.{spec.name}={value} outside (0, 1]")
    if not 0 < calib.abb.ocm_margin < 0.5:
        problems.append(f"abb.ocm_margin={calib.abb.ocm_margin} outside (0, 0.5)")
    if calib.abb.v_low >= calib.abb.v_high or calib.abb.f_low_hz >= calib.abb.f_high_hz:
        problems.append("abb low corner must sit below the high corner")
    if calib.cluster.tcdm_bytes % (4 * calib.cluster.tcdm_banks):
        problems.append("cluster.tcdm_bytes must split evenly over word-interleaved banks")
    if problems:
        raise FormatError("; ".join(problems))
    return calib


def calibration_from_dict(payload: dict[str, Any]) -> Calibration:
    if not isinstance(payload, dict):
        raise FormatError("calibration root must be an object")
    unknown = sorted(set(payload) - set(_SECTIONS) - {"version", "notes"})
    if unknown:
        raise FormatError(f"calibration has unknown sections: {', '.join(unknown)}")
    version = payload.get("version", CALIBRATION_VERSION)
    if version != CALIBRATION_VERSION:
        raise FormatError(f"unsupported calibration version {version!r}")
    sections = {
        name: _build_section(name, cls, payload.get(name, {})) for name, cls in _SECTIONS.items()
    }
    return check_ranges(Calibration(version=version, **sections))


def load_calibration(path: str | Path | None = None) -> Calibration:
    target = Path(path) if path else DEFAULT_CALIBRATION_PATH
    try:
        payload = json.loads(target.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"calibration file not found: {target}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"calibration file is not valid JSON: {target}: {exc}") from exc
    return calibration_from_dict(payload)
