"""Closed-loop body-bias simulation over workload phases, plus minimum-voltage search."""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from ..config import AbbCalibration, PowerCalibration
from ..errors import FormatError, NoFeasibleVoltageError, RangeError
from ..utils.reports import write_rows
from .controller import AbbState
from .delay import DelayModel, PathPopulation, calibrate_delay, population_for
from .monitor import OcmConfig, detect
from .power import power_model

logger = logging.getLogger(__name__)

PROBE = "probe"
OVERCLOCK_PHASES = ("rbe", "marshal", "high")
SWEEP_FREQUENCIES = (200e6, 250e6, 300e6, 350e6, 400e6)
WARMUP_SLACK_CYCLES = 1000
CSV_FIELDS = ("t", "vbb", "pre_errors", "errors", "power_mw")


@dataclass(slots=True)
class Phase:
    """A workload stretch: how deep into the path population it reaches and how often paths toggle."""

    name: str
    cycles: int
    reach: float
    activity: float
    power_activity: str | float = "matmul"

    def __post_init__(self) -> None:
        if self.cycles <= 0:
            raise RangeError(f"phase {self.name!r} needs a positive cycle count")
        if not 0.0 < self.reach <= 1.0:
            raise RangeError(f"phase {self.name!r} reach {self.reach} outside (0, 1]")
        if not 0.0 <= self.activity <= 1.0:
            raise RangeError(f"phase {self.name!r} activity {self.activity} outside [0, 1]")

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "cycles": self.cycles,
            "reach": self.reach,
            "activity": self.activity,
            "power_activity": self.power_activity,
        }


def make_phase(name: str, cycles: int, calib: AbbCalibration | None = None, model: DelayModel | None = None, **overrides: Any) -> Phase:
    calib = calib or AbbCalibration()
    if name == PROBE:
        reach = (model or calibrate_delay(calib)).probe_reach
    elif name in calib.phase_reach:
        reach = calib.phase_reach[name]
    elif "reach" not in overrides:
        raise RangeError(f"phase {name!r} has no calibrated reach; give one explicitly")
    else:
        reach = 1.0
    values: dict[str, Any] = {
        "reach": reach,
        "activity": calib.phase_activity.get(name, calib.phase_activity.get(PROBE, 0.3)),
        "power_activity": calib.phase_power_activity.get(name, "matmul"),
    }
    values.update(overrides)
    return Phase(name=name, cycles=int(cycles), **values)


def overclock_phases(cycles_each: int = 15000, calib: AbbCalibration | None = None) -> list[Phase]:
    """Engine-centric, then data marshaling, then dense core compute."""
    return [make_phase(name, cycles_each, calib) for name in OVERCLOCK_PHASES]


@dataclass(slots=True)
class Disturbance:
    droop_at: int = 0
    droop_cycles: int = 0
    droop_v: float = 0.0
    sine_amplitude: float = 0.0
    sine_period: int = 0

    def offsets(self, cycles: int) -> np.ndarray:
        t = np.arange(cycles, dtype=np.float64)
        out = np.zeros(cycles, dtype=np.float64)
        if self.sine_amplitude and self.sine_period > 0:
            out += self.sine_amplitude * np.sin(2.0 * np.pi * t / self.sine_period)
        if self.droop_cycles > 0 and self.droop_v:
            out[self.droop_at : self.droop_at + self.droop_cycles] -= self.droop_v
        return out

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> Disturbance:
        droop = payload.get("droop", {})
        sine = payload.get("sinusoid", {})
        return cls(
            droop_at=int(droop.get("at", 0)),
            droop_cycles=int(droop.get("cycles", 0)),
            droop_v=float(droop.get("depth_v", 0.0)),
            sine_amplitude=float(sine.get("amplitude_v", 0.0)),
            sine_period=int(sine.get("period_cycles", 0)),
        )


@dataclass(slots=True)
class AbbTrace:
    freq_hz: float
    abb_on: bool
    phases: list[Phase]
    vdd: np.ndarray
    vbb: np.ndarray
    pre_errors: np.ndarray
    errors: np.ndarray
    power_mw: np.ndarray
    steps_up: int = 0
    steps_down: int = 0

    @property
    def cycles(self) -> int:
        return int(self.vbb.size)

    @property
    def episodes(self) -> int:
        """Rising edges of the trigger (pre-error or error) signal."""
        trigger = (self.pre_errors | self.errors).astype(np.int8)
        if not trigger.size:
            return 0
        return int(trigger[0]) + int(np.count_nonzero(np.diff(trigger) == 1))

    def phase_bounds(self) -> list[tuple[str, int, int]]:
        bounds = []
        start = 0
        for p in self.phases:
            bounds.append((p.name, start, start + p.cycles))
            start += p.cycles
        return bounds

    def phase_summary(self) -> list[dict[str, Any]]:
        rows = []
        for name, lo, hi in self.phase_bounds():
            rows.append(
                {
                    "phase": name,
                    "cycles": hi - lo,
                    "pre_errors": int(self.pre_errors[lo:hi].sum()),
                    "errors": int(self.errors[lo:hi].sum()),
                    "mean_vbb": round(float(self.vbb[lo:hi].mean()), 6),
                    "max_vbb": round(float(self.vbb[lo:hi].max()), 6),
                    "mean_power_mw": round(float(self.power_mw[lo:hi].mean()), 4),
                }
            )
        return rows

    def to_dict(self) -> dict[str, Any]:
        seconds = self.cycles / self.freq_hz
        return {
            "freq_hz": self.freq_hz,
            "abb_on": self.abb_on,
            "cycles": self.cycles,
            "pre_errors": int(self.pre_errors.sum()),
            "errors": int(self.errors.sum()),
            "episodes": self.episodes,
            "steps_up": self.steps_up,
            "steps_down": self.steps_down,
            "final_vbb": round(float(self.vbb[-1]), 6) if self.cycles else 0.0,
            "mean_power_mw": round(float(self.power_mw.mean()), 4) if self.cycles else 0.0,
            "energy_uj": round(float(self.power_mw.mean()) * seconds * 1e3, 6) if self.cycles else 0.0,
            "phases": self.phase_summary(),
        }

    def samples(self, decimate: int = 100) -> list[dict[str, Any]]:
        if decimate <= 0:
            raise RangeError("decimation factor must be positive")
        starts = np.arange(0, self.cycles, decimate)
        if not starts.size:
            return []
        pre = np.add.reduceat(self.pre_errors.astype(np.int64), starts)
        err = np.add.reduceat(self.errors.astype(np.int64), starts)
        energy = np.add.reduceat(self.power_mw, starts)
        widths = np.diff(np.append(starts, self.cycles))
        return [
            {
                "t": int(t),
                "vbb": round(float(self.vbb[t]), 6),
                "pre_errors": int(p),
                "errors": int(e),
                "power_mw": round(float(s / w), 4),
            }
            for t, p, e, s, w in zip(starts, pre, err, energy, widths)
        ]

    def write_csv(self, path: str | Path, decimate: int = 100) -> Path:
        return write_rows(path, CSV_FIELDS, self.samples(decimate))


def simulate(
    phases: Sequence[Phase],
    vdd: float,
    freq_hz: float,
    abb_on: bool,
    calib: AbbCalibration | None = None,
    power_calib: PowerCalibration | None = None,
    disturbance: Disturbance | None = None,
    seed: int = 0,
    model: DelayModel | None = None,
    population: PathPopulation | None = None,
    margin: float | None = None,
) -> AbbTrace:
    calib = calib or AbbCalibration()
    if freq_hz <= 0 or vdd <= 0:
        raise RangeError(f"operating point needs positive Vdd and frequency, got {vdd} V / {freq_hz} Hz")
    model = model or calibrate_delay(calib)
    population = population or population_for(calib)
    ocm = OcmConfig(calib.ocm_margin if margin is None else margin)
    pm = power_model(power_calib)
    state = AbbState.from_calibration(calib)
    rng = np.random.default_rng(seed)

    period = 1.0 / freq_hz
    window_edge = period * (1.0 - ocm.margin)
    total = sum(p.cycles for p in phases)
    supply = vdd + (disturbance.offsets(total) if disturbance else np.zeros(total))
    vbb = np.zeros(total, dtype=np.float64)
    pre = np.zeros(total, dtype=bool)
    err = np.zeros(total, dtype=bool)
    power = np.zeros(total, dtype=np.float64)

    t = 0
    for ph in phases:
        begin = t
        first = population.exercised_from(ph.reach)
        for _ in range(ph.cycles):
            bias = state.vbb if abb_on else 0.0
            crit = model.critical(float(supply[t]), bias)
            stop = population.slower_than(window_edge / crit)
            if stop > first:
                active = rng.random(stop - first) < ph.activity
                if active.any():
                    found = detect(population.rel[first:stop] * crit, active, population.monitored_mask(first, stop), period, ocm.margin)
                    pre[t], err[t] = found.pre_error, found.error
            vbb[t] = bias
            if abb_on:
                state.tick(bool(pre[t] or err[t]))
            t += 1
        span = slice(begin, t)
        power[span] = pm.dynamic_mw(supply[span], freq_hz, ph.power_activity) + pm.leakage_mw(supply[span], vbb[span])

    trace = AbbTrace(
        freq_hz=freq_hz,
        abb_on=abb_on,
        phases=list(phases),
        vdd=supply,
        vbb=vbb,
        pre_errors=pre,
        errors=err,
        power_mw=power,
        steps_up=state.steps_up,
        steps_down=state.steps_down,
    )
    logger.debug(
        "abb %s at %.3f V / %.0f MHz: %d cycles, %d pre-errors, %d errors",
        "on" if abb_on else "off",
        vdd,
        freq_hz / 1e6,
        total,
        int(pre.sum()),
        int(err.sum()),
    )
    return trace


# Minimum operating voltage


@dataclass(slots=True)
class ProbeResult:
    vdd: float
    errors: int
    pre_errors: int
    vbb: float
    warmup_cycles: int


def warmup_cycles(abb_on: bool, calib: AbbCalibration | None = None) -> int:
    if not abb_on:
        return 0
    state = AbbState.from_calibration(calib)
    return state.max_level * state.settle_cycles + WARMUP_SLACK_CYCLES


def probe(vdd: float, freq_hz: float, abb_on: bool, calib: AbbCalibration | None = None, probe_cycles: int = 4000, seed: int = 0) -> ProbeResult:
    """Run the probe workload; with ABB the controller first settles and only the tail is scored."""
    calib = calib or AbbCalibration()
    model = calibrate_delay(calib)
    warm = warmup_cycles(abb_on, calib)
    trace = simulate([make_phase(PROBE, warm + probe_cycles, calib, model)], vdd, freq_hz, abb_on, calib, seed=seed, model=model)
    return ProbeResult(
        vdd=vdd,
        errors=int(trace.errors[warm:].sum()),
        pre_errors=int(trace.pre_errors[warm:].sum()),
        vbb=float(trace.vbb[-1]),
        warmup_cycles=warm,
    )


def find_min_vdd(
    freq_hz: float,
    abb_on: bool,
    calib: AbbCalibration | None = None,
    lo: float = 0.45,
    hi: float = 0.9,
    tol: float = 1e-3,
    probe_cycles: int = 4000,
    seed: int = 0,
) -> float:
    """Lowest supply (to ``tol``) with no real errors over the probe run."""
    if not 0 < lo < hi or tol <= 0:
        raise RangeError(f"bad voltage search range [{lo}, {hi}] / tol {tol}")

    def feasible(v: float) -> bool:
        return probe(v, freq_hz, abb_on, calib, probe_cycles, seed).errors == 0

    if not feasible(hi):
        raise NoFeasibleVoltageError(f"errors even at {hi:.3f} V for {freq_hz / 1e6:.0f} MHz (abb {'on' if abb_on else 'off'})")
    if feasible(lo):
        return lo
    # fixed iteration count: every answer lands on the same dyadic grid
    for _ in range(math.ceil(math.log2((hi - lo) / tol))):
        mid = (lo + hi) / 2.0
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    logger.info("min Vdd at %.0f MHz (abb %s): %.4f V", freq_hz / 1e6, "on" if abb_on else "off", hi)
    return hi


def min_vdd_report(
    freq_hz: float = 400e6,
    calib: AbbCalibration | None = None,
    power_calib: PowerCalibration | None = None,
    nominal_vdd: float = 0.8,
    seed: int = 0,
) -> dict[str, Any]:
    calib = calib or AbbCalibration()
    pm = power_model(power_calib)
    off = find_min_vdd(freq_hz, False, calib, seed=seed)
    on = find_min_vdd(freq_hz, True, calib, seed=seed)
    bias = probe(on, freq_hz, True, calib, seed=seed).vbb
    nominal = pm.breakdown(nominal_vdd, freq_hz, 0.0)
    without = pm.breakdown(off, freq_hz, 0.0)
    with_abb = pm.breakdown(on, freq_hz, bias)
    return {
        "freq_hz": freq_hz,
        "min_vdd_no_abb": round(off, 4),
        "min_vdd_abb": round(on, 4),
        "vbb_at_min": round(bias, 4),
        "reference_vdd_no_abb": calib.min_vdd_no_abb,
        "power_nominal": nominal.to_dict(),
        "power_no_abb": without.to_dict(),
        "power_abb": with_abb.to_dict(),
        "ratio_vs_nominal": round(with_abb.total_mw / nominal.total_mw, 4),
        "ratio_vs_no_abb": round(with_abb.total_mw / without.total_mw, 4),
    }


def frequency_sweep(freqs: Sequence[float] = SWEEP_FREQUENCIES, calib: AbbCalibration | None = None, seed: int = 0) -> list[dict[str, Any]]:
    rows = []
    for f in freqs:
        off = find_min_vdd(f, False, calib, seed=seed)
        on = find_min_vdd(f, True, calib, seed=seed)
        rows.append({"freq_mhz": round(f / 1e6, 3), "min_vdd_no_abb": round(off, 4), "min_vdd_abb": round(on, 4), "saving_v": round(off - on, 4)})
    return rows


# Scenario files


@dataclass(slots=True)
class AbbScenario:
    name: str
    vdd: float
    freq_hz: float
    abb_on: bool
    phases: list[Phase]
    disturbance: Disturbance | None = None
    seed: int = 0
    decimate: int = 100

    def run(self, calib: AbbCalibration | None = None, power_calib: PowerCalibration | None = None, abb_on: bool | None = None) -> AbbTrace:
        return simulate(
            self.phases,
            self.vdd,
            self.freq_hz,
            self.abb_on if abb_on is None else abb_on,
            calib,
            power_calib,
            self.disturbance,
            self.seed,
        )


def scenario_from_dict(payload: dict[str, Any], calib: AbbCalibration | None = None) -> AbbScenario:
    calib = calib or AbbCalibration()
    try:
        phases = []
        for entry in payload["phases"]:
            overrides = {k: entry[k] for k in ("reach", "activity", "power_activity") if k in entry}
            phases.append(make_phase(entry["name"], int(entry["cycles"]), calib, **overrides))
        disturbance = Disturbance.from_dict(payload["disturbance"]) if "disturbance" in payload else None
        return AbbScenario(
            name=str(payload.get("name", "abb")),
            vdd=float(payload["vdd"]),
            freq_hz=float(payload["freq_hz"]),
            abb_on=bool(payload.get("abb_on", True)),
            phases=phases,
            disturbance=disturbance,
            seed=int(payload.get("seed", 0)),
            decimate=int(payload.get("decimate", 100)),
        )
    except KeyError as exc:
        raise FormatError(f"abb scenario is missing key {exc.args[0]!r}") from exc


def load_abb_scenario(path: str | Path, calib: AbbCalibration | None = None) -> AbbScenario:
    source = Path(path)
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"abb scenario not found: {source}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"abb scenario is not valid JSON: {source}: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError("abb scenario root must be an object")
    return scenario_from_dict(payload, calib)
