"""Cluster power: activity-scaled dynamic power plus exponential leakage.

dynamic = c_eff * activity * f * Vdd^beta, with beta fitted so the dynamic ratio between
the two calibration corners matches; leakage grows exponentially with Vdd and with
forward body bias.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from functools import lru_cache
from typing import Any

import numpy as np

from ..config import PowerCalibration
from ..errors import RangeError


@dataclass(frozen=True, slots=True)
class PowerBreakdown:
    dynamic_mw: float
    leakage_mw: float

    @property
    def total_mw(self) -> float:
        return self.dynamic_mw + self.leakage_mw

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["total_mw"] = self.total_mw
        return payload


@dataclass(frozen=True, slots=True)
class PowerModel:
    c_eff: float
    beta: float
    leak0_mw: float
    leak_per_volt: float
    fbb_per_volt: float
    anchor_vdd: float
    activity: tuple[tuple[str, float], ...]

    def activity_of(self, activity: str | float) -> float:
        if isinstance(activity, str):
            table = dict(self.activity)
            if activity not in table:
                raise RangeError(f"unknown activity class {activity!r}; known: {sorted(table)}")
            return table[activity]
        if not 0.0 <= activity <= 1.0:
            raise RangeError(f"activity {activity} outside [0, 1]")
        return float(activity)

    def dynamic_mw(self, vdd: float, freq_hz: float, activity: str | float = "matmul") -> float:
        return self.c_eff * self.activity_of(activity) * freq_hz * vdd**self.beta

    def leakage_mw(self, vdd: float, vbb: float = 0.0) -> float:
        return self.leak0_mw * np.exp(self.leak_per_volt * (vdd - self.anchor_vdd) + self.fbb_per_volt * vbb)

    def breakdown(self, vdd: float, freq_hz: float, vbb: float = 0.0, activity: str | float = "matmul") -> PowerBreakdown:
        return PowerBreakdown(self.dynamic_mw(vdd, freq_hz, activity), self.leakage_mw(vdd, vbb))

    def power_mw(self, vdd: float, freq_hz: float, vbb: float = 0.0, activity: str | float = "matmul") -> float:
        return self.breakdown(vdd, freq_hz, vbb, activity).total_mw


def _fit(calib: PowerCalibration) -> PowerModel:
    dynamic = calib.anchor_power_mw * calib.dynamic_fraction
    leakage = calib.anchor_power_mw - dynamic
    freq_ratio = calib.low_freq_hz / calib.anchor_freq_hz
    # dynamic_ratio = anchor / low corner; solve for the voltage exponent.
    beta = math.log(1.0 / (calib.dynamic_ratio * freq_ratio)) / math.log(calib.low_vdd / calib.anchor_vdd)
    anchor_activity = calib.activity.get("matmul", 1.0)
    c_eff = dynamic / (anchor_activity * calib.anchor_freq_hz * calib.anchor_vdd**beta)
    leak_per_volt = math.log(calib.leakage_ratio) / (calib.anchor_vdd - calib.low_vdd)
    return PowerModel(
        c_eff=c_eff,
        beta=beta,
        leak0_mw=leakage,
        leak_per_volt=leak_per_volt,
        fbb_per_volt=calib.fbb_leakage_per_volt,
        anchor_vdd=calib.anchor_vdd,
        activity=tuple(sorted(calib.activity.items())),
    )


@lru_cache(maxsize=16)
def _cached(key: tuple[Any, ...]) -> PowerModel:
    return _fit(PowerCalibration(*key[:-1], activity=dict(key[-1])))


def power_model(calib: PowerCalibration | None = None) -> PowerModel:
    calib = calib or PowerCalibration()
    key = (
        calib.anchor_vdd,
        calib.anchor_freq_hz,
        calib.anchor_power_mw,
        calib.dynamic_fraction,
        calib.low_vdd,
        calib.low_freq_hz,
        calib.dynamic_ratio,
        calib.leakage_ratio,
        calib.fbb_leakage_per_volt,
        tuple(sorted(calib.activity.items())),
    )
    return _cached(key)


def power(vdd: float, freq_hz: float, vbb: float = 0.0, activity: str | float = "matmul", calib: PowerCalibration | None = None) -> float:
    """Total cluster power in milliwatts."""
    return power_model(calib).power_mw(vdd, freq_hz, vbb, activity)
