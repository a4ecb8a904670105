from .engine import RbeEngine, binconv, execute_functional, execute_timed, job_efficiency, stage_job
from .job import JobStrides, RbeJob, build_uloop, check, job_from_dict, load_job, place, validate
from .queue import DoneEvent, JobQueue
from .timing import GEOMETRY, CycleReport, EngineGeometry, job_cycles, job_total_cycles, throughput_sweep
from .uloop import UloopLevel, UloopProgram

__all__ = [
    "CycleReport",
    "DoneEvent",
    "EngineGeometry",
    "GEOMETRY",
    "JobQueue",
    "JobStrides",
    "RbeEngine",
    "RbeJob",
    "UloopLevel",
    "UloopProgram",
    "binconv",
    "build_uloop",
    "check",
    "execute_functional",
    "execute_timed",
    "job_cycles",
    "job_total_cycles",
    "job_efficiency",
    "job_from_dict",
    "load_job",
    "place",
    "stage_job",
    "throughput_sweep",
    "validate",
]
