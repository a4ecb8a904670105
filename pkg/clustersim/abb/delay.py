"""Alpha-power path delay under supply and forward body bias, and the sampled path population.

d(path) = rel(path) * d0 * Vdd / (Vdd - Vth + k_bb * Vbb) ** alpha

The two frequency corners pin ``d0`` and ``Vth``. The minimum-voltage points of the
probe workload pin how deep it exercises the population (``probe_reach``) and the
body-bias coefficient ``k_bb``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

import numpy as np

from ..config import AbbCalibration
from ..errors import RangeError


@dataclass(frozen=True, slots=True)
class DelayModel:
    d0: float
    vth: float
    k_bb: float
    alpha: float
    probe_reach: float

    def critical(self, vdd: float, vbb: float = 0.0) -> float:
        """Delay in seconds of the slowest path in the design (rel = 1)."""
        overdrive = vdd - self.vth + self.k_bb * vbb
        if overdrive <= 0:
            return math.inf
        return self.d0 * vdd / overdrive**self.alpha

    def path_delay(self, rel: float | np.ndarray, vdd: float, vbb: float = 0.0) -> float | np.ndarray:
        return rel * self.critical(vdd, vbb)

    def fmax(self, vdd: float, vbb: float = 0.0, reach: float = 1.0) -> float:
        delay = reach * self.critical(vdd, vbb)
        return 0.0 if math.isinf(delay) else 1.0 / delay

    def to_dict(self) -> dict[str, Any]:
        return {
            "d0": self.d0,
            "vth": self.vth,
            "k_bb": self.k_bb,
            "alpha": self.alpha,
            "probe_reach": self.probe_reach,
        }


def calibrate_delay(calib: AbbCalibration | None = None) -> DelayModel:
    calib = calib or AbbCalibration()
    alpha = calib.alpha
    if not calib.v_low < calib.v_high or not calib.f_low_hz < calib.f_high_hz:
        raise RangeError("delay calibration needs a low corner below the high corner")
    # (v_high - vth) / (v_low - vth) fixed by the two corners
    q = ((calib.f_high_hz / calib.f_low_hz) * (calib.v_high / calib.v_low)) ** (1.0 / alpha)
    vth = (q * calib.v_low - calib.v_high) / (q - 1.0)
    d0 = (calib.v_high - vth) ** alpha / (calib.v_high * calib.f_high_hz)
    unbiased = DelayModel(d0, vth, 0.0, alpha, 1.0)
    period = 1.0 / calib.probe_freq_hz
    reach = period / unbiased.critical(calib.min_vdd_no_abb)
    v = calib.min_vdd_abb
    overdrive = (reach * d0 * v / period) ** (1.0 / alpha)
    k_bb = (overdrive - v + vth) / calib.vbb_max
    if not 0 < reach <= 1 or k_bb <= 0:
        raise RangeError(f"delay calibration is inconsistent: reach={reach:.4f}, k_bb={k_bb:.4f}")
    return DelayModel(d0, vth, k_bb, alpha, reach)


@dataclass(frozen=True, slots=True)
class PathPopulation:
    """Relative path delays sorted slowest first; the slowest ``monitored`` carry shadow registers."""

    rel: np.ndarray
    monitored: int
    key: np.ndarray = field(default=None, repr=False, compare=False)

    def __post_init__(self) -> None:
        if self.key is None:
            object.__setattr__(self, "key", -self.rel)

    def __len__(self) -> int:
        return int(self.rel.size)

    def slower_than(self, rel: float) -> int:
        """Number of paths with relative delay strictly above ``rel`` (a prefix)."""
        return int(np.searchsorted(self.key, -rel, side="left"))

    def exercised_from(self, reach: float) -> int:
        """Index of the first path a workload of depth ``reach`` can sensitize."""
        return self.slower_than(reach)

    def monitored_mask(self, start: int, stop: int) -> np.ndarray:
        return np.arange(start, stop) < self.monitored


def sample_population(paths: int = 20000, sigma: float = 0.15, seed: int = 7, monitored_fraction: float = 0.01) -> PathPopulation:
    if paths <= 0 or sigma <= 0:
        raise RangeError("path population needs positive size and spread")
    if not 0 < monitored_fraction <= 1:
        raise RangeError(f"monitored fraction {monitored_fraction} outside (0, 1]")
    rng = np.random.default_rng(seed)
    delays = rng.lognormal(mean=0.0, sigma=sigma, size=paths)
    rel = np.sort(delays / delays.max())[::-1].copy()
    return PathPopulation(rel=rel, monitored=max(1, int(round(paths * monitored_fraction))))


@lru_cache(maxsize=8)
def _population(paths: int, sigma: float, seed: int, fraction: float) -> PathPopulation:
    return sample_population(paths, sigma, seed, fraction)


def population_for(calib: AbbCalibration | None = None) -> PathPopulation:
    calib = calib or AbbCalibration()
    return _population(calib.paths, calib.path_sigma, calib.population_seed, calib.monitored_fraction)
