"""On-chip timing monitors: shadow registers clocked ``margin * period`` early on the monitored endpoints."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import RangeError


@dataclass(frozen=True, slots=True)
class OcmConfig:
    margin: float = 0.05

    def __post_init__(self) -> None:
        if not 0.0 < self.margin < 0.5:
            raise RangeError(f"monitor margin {self.margin} outside (0, 0.5) of the period")


@dataclass(frozen=True, slots=True)
class Detection:
    pre_error: bool
    error: bool

    @property
    def trigger(self) -> bool:
        return self.pre_error or self.error


def detect(delays: np.ndarray, active: np.ndarray, monitored: np.ndarray, period: float, margin: float) -> Detection:
    """Pre-error: a monitored active path lands in (period - margin*period, period].
    Error: any active path exceeds the period.
    """
    delays = np.asarray(delays, dtype=np.float64)
    active = np.asarray(active, dtype=bool)
    late = active & (delays > period)
    window = active & np.asarray(monitored, dtype=bool) & (delays > period * (1.0 - margin)) & ~late
    return Detection(pre_error=bool(window.any()), error=bool(late.any()))
