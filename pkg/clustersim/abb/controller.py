"""Body-bias generator state machine.

A trigger (pre-error or error) ramps Vbb one step up over ``settle_cycles``; a trigger
arriving mid-ramp queues the next step. ``relax_window`` quiet cycles drop Vbb one step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from ..config import AbbCalibration
from ..errors import RangeError


@dataclass(slots=True)
class AbbState:
    step: float = 0.05
    vbb_max: float = 0.45
    settle_cycles: int = 310
    relax_window: int = 5000
    vbb: float = 0.0
    level: int = 0
    ramp_from: float = 0.0
    ramp_left: int = 0
    pending: bool = False
    quiet: int = 0
    episodes: int = 0
    steps_up: int = 0
    steps_down: int = 0
    _last_trigger: bool = False

    def __post_init__(self) -> None:
        if self.step <= 0 or self.vbb_max < 0 or self.settle_cycles <= 0 or self.relax_window <= 0:
            raise RangeError("body-bias controller needs positive step, settle latency and relax window")
        self.level = min(max(self.level, 0), self.max_level)
        self.vbb = self.level_voltage(self.level)

    @classmethod
    def from_calibration(cls, calib: AbbCalibration | None = None) -> AbbState:
        calib = calib or AbbCalibration()
        return cls(
            step=calib.vbb_step,
            vbb_max=calib.vbb_max,
            settle_cycles=calib.settle_cycles,
            relax_window=calib.relax_window_cycles,
        )

    @property
    def max_level(self) -> int:
        return math.ceil(self.vbb_max / self.step - 1e-9)

    @property
    def ramping(self) -> bool:
        return self.ramp_left > 0

    @property
    def target(self) -> float:
        return self.level_voltage(self.level)

    def level_voltage(self, level: int) -> float:
        return min(level * self.step, self.vbb_max)

    def _start_ramp(self) -> None:
        self.ramp_from = self.vbb
        self.level += 1
        self.ramp_left = self.settle_cycles
        self.steps_up += 1

    def _advance(self) -> None:
        if not self.ramp_left:
            return
        self.ramp_left -= 1
        if self.ramp_left:
            done = (self.settle_cycles - self.ramp_left) / self.settle_cycles
            self.vbb = self.ramp_from + (self.target - self.ramp_from) * done
            return
        self.vbb = self.target
        if self.pending and self.level < self.max_level:
            self._start_ramp()
        self.pending = False

    def tick(self, trigger: bool) -> float:
        self._advance()
        if trigger:
            if not self._last_trigger:
                self.episodes += 1
            self.quiet = 0
            if self.ramping:
                self.pending = self.level < self.max_level
            elif self.level < self.max_level:
                self._start_ramp()
        elif not self.ramping:
            self.quiet += 1
            if self.quiet >= self.relax_window:
                self.quiet = 0
                if self.level > 0:
                    self.level -= 1
                    self.vbb = self.target
                    self.steps_down += 1
        self._last_trigger = trigger
        return self.vbb


def step_controller(state: AbbState, pre_error: bool) -> AbbState:
    state.tick(pre_error)
    return state
