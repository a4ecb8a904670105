"""Calibrated phase-level cycle model of the binary engine.

Per (kout tile, 3x3 output group) the engine runs, for every Kin chunk and input-plane
pass, a LOAD of the input patch through the 9-word streamer followed by a COMPUTE of
all weight bits; then NORMQUANT and STREAMOUT of the finished accumulators. Phases are
sequential within a job.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

from ..config import RbeCalibration
from ..quant import CONV1X1, CONV3X3, NormParams
from .job import PLANES_PER_PASS, SPATIAL_GROUP, RbeJob, build_uloop

logger = logging.getLogger(__name__)

PHASES = ("LOAD", "COMPUTE", "NORMQUANT", "STREAMOUT")


@dataclass(frozen=True, slots=True)
class EngineGeometry:
    cores: int = 9
    blocks_per_core: int = 9
    binconvs_per_block: int = 4
    lanes: int = 32
    accumulators_per_core: int = 32
    input_buffer_pixels: int = 25
    input_buffer_planes: int = 4

    @property
    def binary_multipliers(self) -> int:
        return self.cores * self.blocks_per_core * self.binconvs_per_block * self.lanes


GEOMETRY = EngineGeometry()


@dataclass(frozen=True, slots=True)
class Segment:
    """One contiguous phase of a job; ``beats`` streamer cycles start at ``addr``."""

    phase: str
    cycles: int
    beats: int = 0
    addr: int = 0
    tile: int = 0


@dataclass(slots=True)
class TileCycles:
    kout_tile: int
    group_y: int
    group_x: int
    pixels: int
    LOAD: int = 0
    COMPUTE: int = 0
    NORMQUANT: int = 0
    STREAMOUT: int = 0

    def to_dict(self) -> dict[str, int]:
        return {
            "kout_tile": self.kout_tile,
            "group_y": self.group_y,
            "group_x": self.group_x,
            "pixels": self.pixels,
            **{p: getattr(self, p) for p in PHASES},
        }


@dataclass(slots=True)
class CycleReport:
    phases: dict[str, int]
    tiles: list[TileCycles]
    macs: int
    w_bits: int
    i_bits: int
    clock_hz: float
    binary_macs_compute_peak: float = 0.0
    setup: int = 0
    total: int = field(init=False)

    def __post_init__(self) -> None:
        self.total = sum(self.phases.values()) + self.setup

    @property
    def ops(self) -> int:
        return 2 * self.macs

    @property
    def ops_per_cycle(self) -> float:
        return self.ops / self.total if self.total else 0.0

    @property
    def compute_ops_per_cycle(self) -> float:
        return self.ops / self.phases["COMPUTE"] if self.phases["COMPUTE"] else 0.0

    @property
    def binary_ops_per_cycle(self) -> float:
        return self.ops_per_cycle * self.w_bits * self.i_bits

    @property
    def gops(self) -> float:
        return self.ops_per_cycle * self.clock_hz / 1e9

    @property
    def binary_gops(self) -> float:
        return self.binary_ops_per_cycle * self.clock_hz / 1e9

    @property
    def seconds(self) -> float:
        return self.total / self.clock_hz

    def to_dict(self, per_tile: bool = False) -> dict[str, Any]:
        payload: dict[str, Any] = {
            "phases": dict(self.phases),
            "setup": self.setup,
            "total": self.total,
            "macs": self.macs,
            "ops": self.ops,
            "ops_per_cycle": round(self.ops_per_cycle, 4),
            "compute_ops_per_cycle": round(self.compute_ops_per_cycle, 4),
            "binary_ops_per_cycle": round(self.binary_ops_per_cycle, 4),
            "gops": round(self.gops, 4),
            "binary_gops": round(self.binary_gops, 4),
            "peak_binary_macs_per_cycle": round(self.binary_macs_compute_peak, 4),
        }
        if per_tile:
            payload["tiles"] = [t.to_dict() for t in self.tiles]
        return payload


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


def job_schedule(job: RbeJob, calib: RbeCalibration) -> list[Segment]:
    """Ordered phase segments of a job, one group of segments per output tile."""
    loop = build_uloop(job)
    words_per_beat = calib.streamer_words
    segments: list[Segment] = []
    for tile, step in enumerate(loop.iterate(upto="group_x")):
        kt, gy, gx = step.index
        kout_tile = min(32, job.kout - 32 * kt)
        gh = min(SPATIAL_GROUP, job.hout - SPATIAL_GROUP * gy)
        gw = min(SPATIAL_GROUP, job.wout - SPATIAL_GROUP * gx)
        if job.mode == CONV3X3:
            patch = (gh + 2) * (gw + 2)
        else:
            patch = gh * gw
        for kc in range(job.c32_in):
            for ip in range(job.i_passes):
                planes = min(PLANES_PER_PASS, job.i_bits - PLANES_PER_PASS * ip)
                words = patch * planes
                beats = _ceil(words, words_per_beat)
                addr = loop.addresses((kt, gy, gx, kc, ip, 0)).act_addr
                segments.append(Segment("LOAD", beats + calib.load_latency_cycles, beats, addr, tile))
                compute = job.serial_w * calib.kout_cycles_per_weight_bit * kout_tile // 32
                segments.append(Segment("COMPUTE", compute + calib.compute_pass_overhead_cycles, 0, 0, tile))
        segments.append(Segment("NORMQUANT", calib.normquant_cycles_per_block * _ceil(kout_tile, 32), 0, 0, tile))
        beats = _ceil(gh * gw * job.o_bits, words_per_beat)
        segments.append(Segment("STREAMOUT", beats + calib.streamout_latency_cycles, beats, step.out_addr, tile))
    return segments


def job_cycles(job: RbeJob, calib: RbeCalibration | None = None) -> CycleReport:
    calib = calib or RbeCalibration()
    segments = job_schedule(job, calib)
    phases = {p: 0 for p in PHASES}
    tiles: list[TileCycles] = []
    loop = build_uloop(job)
    for step in loop.iterate(upto="group_x"):
        kt, gy, gx = step.index
        gh = min(SPATIAL_GROUP, job.hout - SPATIAL_GROUP * gy)
        gw = min(SPATIAL_GROUP, job.wout - SPATIAL_GROUP * gx)
        tiles.append(TileCycles(kt, gy, gx, gh * gw))
    peak = 0.0
    for seg in segments:
        phases[seg.phase] += seg.cycles
        tile = tiles[seg.tile]
        setattr(tile, seg.phase, getattr(tile, seg.phase) + seg.cycles)
    for tile in tiles:
        kout_tile = min(32, job.kout - 32 * tile.kout_tile)
        bin_macs = tile.pixels * kout_tile * job.kin * job.taps * job.w_bits * job.i_bits
        if tile.COMPUTE:
            peak = max(peak, bin_macs / tile.COMPUTE)
    report = CycleReport(
        phases=phases,
        tiles=tiles,
        macs=job.macs,
        w_bits=job.w_bits,
        i_bits=job.i_bits,
        clock_hz=calib.clock_hz,
        binary_macs_compute_peak=peak,
        setup=calib.job_setup_cycles,
    )
    logger.debug("RBE job %s W%d I%d: %d cycles", job.mode, job.w_bits, job.i_bits, report.total)
    return report


def _pieces(total: int, size: int) -> list[tuple[int, int]]:
    """(extent, count) pairs of a dimension cut into ``size``-sized pieces."""
    full, rest = divmod(total, size)
    pieces = [(size, full)] if full else []
    if rest:
        pieces.append((rest, 1))
    return pieces


def job_total_cycles(job: RbeJob, calib: RbeCalibration | None = None) -> int:
    """``job_cycles(job).total`` without building segments; equal-shape groups cost the same."""
    calib = calib or RbeCalibration()
    words = calib.streamer_words
    planes = [min(PLANES_PER_PASS, job.i_bits - PLANES_PER_PASS * ip) for ip in range(job.i_passes)]
    total = calib.job_setup_cycles
    for kout_tile, n_k in _pieces(job.kout, 32):
        compute = job.serial_w * calib.kout_cycles_per_weight_bit * kout_tile // 32 + calib.compute_pass_overhead_cycles
        normquant = calib.normquant_cycles_per_block * _ceil(kout_tile, 32)
        for gh, n_y in _pieces(job.hout, SPATIAL_GROUP):
            for gw, n_x in _pieces(job.wout, SPATIAL_GROUP):
                patch = (gh + 2) * (gw + 2) if job.mode == CONV3X3 else gh * gw
                passes = sum(_ceil(patch * p, words) + calib.load_latency_cycles + compute for p in planes)
                streamout = _ceil(gh * gw * job.o_bits, words) + calib.streamout_latency_cycles
                total += n_k * n_y * n_x * (job.c32_in * passes + normquant + streamout)
    return total


def sweep_job(mode: str, w_bits: int, i_bits: int, o_bits: int = 4, kin: int = 64, kout: int = 64, out: tuple[int, int] = (3, 3)) -> RbeJob:
    return RbeJob(
        mode=mode,
        w_bits=w_bits,
        i_bits=i_bits,
        o_bits=o_bits,
        kin=kin,
        kout=kout,
        hout=out[0],
        wout=out[1],
        norm=NormParams.identity(kout),
    )


def throughput_sweep(
    calib: RbeCalibration | None = None,
    kin: int = 64,
    kout: int = 64,
    out: tuple[int, int] = (3, 3),
    bits: tuple[int, ...] = (2, 4, 8),
    o_bits: int = 4,
) -> list[dict[str, Any]]:
    calib = calib or RbeCalibration()
    rows: list[dict[str, Any]] = []
    for mode in (CONV3X3, CONV1X1):
        for w in bits:
            for i in bits:
                report = job_cycles(sweep_job(mode, w, i, o_bits, kin, kout, out), calib)
                rows.append(
                    {
                        "mode": mode,
                        "W": w,
                        "I": i,
                        "ops_per_cycle": round(report.ops_per_cycle, 4),
                        "binary_ops_per_cycle": round(report.binary_ops_per_cycle, 4),
                        "compute_ops_per_cycle": round(report.compute_ops_per_cycle, 4),
                        "gops": round(report.gops, 4),
                        "binary_gops": round(report.binary_gops, 4),
                        **{f"{p.lower()}_cycles": report.phases[p] for p in PHASES},
                        "total_cycles": report.total,
                    }
                )
    return rows
