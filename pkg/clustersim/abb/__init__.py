from .controller import AbbState, step_controller
from .delay import DelayModel, PathPopulation, calibrate_delay, population_for, sample_population
from .monitor import Detection, OcmConfig, detect
from .power import PowerBreakdown, PowerModel, power, power_model
from .simulate import (
    AbbScenario,
    AbbTrace,
    Disturbance,
    Phase,
    ProbeResult,
    find_min_vdd,
    frequency_sweep,
    load_abb_scenario,
    make_phase,
    min_vdd_report,
    overclock_phases,
    probe,
    simulate,
)

__all__ = [
    "AbbScenario",
    "AbbState",
    "AbbTrace",
    "DelayModel",
    "Detection",
    "Disturbance",
    "OcmConfig",
    "PathPopulation",
    "Phase",
    "PowerBreakdown",
    "PowerModel",
    "ProbeResult",
    "calibrate_delay",
    "detect",
    "find_min_vdd",
    "frequency_sweep",
    "load_abb_scenario",
    "make_phase",
    "min_vdd_report",
    "overclock_phases",
    "population_for",
    "power",
    "power_model",
    "probe",
    "sample_population",
    "simulate",
    "step_controller",
]
