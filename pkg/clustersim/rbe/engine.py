"""Bit-exact functional model of the binary engine and its cycle-stepped wrapper."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Any

import numpy as np

from ..abb.power import power_model
from ..config import PowerCalibration, RbeCalibration
from ..errors import DescriptorError
from ..memory import Memory
from ..quant import (
    CONV3X3,
    LANES,
    NormParams,
    PackedActivations,
    PackedWeights,
    QTensor,
    check_accumulators,
    normalize_quantize,
    pack_activations,
    pack_bitplanes,
    pack_weights,
)
from ..schemas import OperatingPoint
from .job import SPATIAL_GROUP, RbeJob, check
from .queue import DoneEvent, JobQueue
from .timing import CycleReport, Segment, job_cycles, job_schedule

logger = logging.getLogger(__name__)


def binconv(act_word: int | np.ndarray, wgt_word: int | np.ndarray) -> int | np.ndarray:
    """Popcount of the AND of two 32-lane bit words."""
    result = np.bitwise_count(np.bitwise_and(np.asarray(act_word, dtype=np.uint32), np.asarray(wgt_word, dtype=np.uint32)))
    if np.ndim(result) == 0:
        return int(result)
    return result.astype(np.int64)


def _read_operands(job: RbeJob, mem: Memory) -> tuple[np.ndarray, np.ndarray]:
    acts = mem.read_words(job.act_addr, job.act_words).reshape(job.hin, job.win, job.c32_in, job.i_bits)
    if job.mode == CONV3X3:
        shape = (job.kout, job.c32_in, job.w_bits, 9)
    else:
        shape = (job.kout, job.c32_in, job.w_bits, 1)
    wgts = mem.read_words(job.wgt_addr, job.wgt_words).reshape(shape)
    return acts, wgts


def _tile_accumulators(window: np.ndarray, wgts: np.ndarray) -> np.ndarray:
    """Output-stationary accumulation of one tile.

    ``window`` is (gh, gw, taps, c32, I) activation words gathered per tap, ``wgts`` is
    (kt, c32, W, taps). Every partial product is a BinConv popcount shifted by i + j.
    """
    a = window[:, :, None, :, :, :, None]
    w = wgts.transpose(0, 3, 1, 2)[None, None, :, :, :, None, :]
    ones = np.bitwise_count(np.bitwise_and(a, w)).sum(axis=(3, 4), dtype=np.int64)
    i_bits, w_bits = window.shape[-1], wgts.shape[2]
    scale = np.left_shift(1, np.add.outer(np.arange(i_bits), np.arange(w_bits))).astype(np.int64)
    return (ones * scale).sum(axis=(3, 4))


def execute_functional(job: RbeJob, mem: Memory, overflow: str = "trap") -> np.ndarray:
    """Run the job on packed operands in ``mem`` and write the packed output region.

    Returns the (Hout, Wout, Kout) quantized outputs.
    """
    check(job)
    acts, wgts = _read_operands(job, mem)
    if job.mode == CONV3X3 and job.padding == "same":
        acts = np.pad(acts, ((1, 1), (1, 1), (0, 0), (0, 0)))
    side = 3 if job.taps == 9 else 1
    out = np.zeros((job.hout, job.wout, job.c32_out * LANES), dtype=np.int64)
    for kt in range(job.c32_out):
        k0, k1 = 32 * kt, min(32 * (kt + 1), job.kout)
        for y0 in range(0, job.hout, SPATIAL_GROUP):
            for x0 in range(0, job.wout, SPATIAL_GROUP):
                gh = min(SPATIAL_GROUP, job.hout - y0)
                gw = min(SPATIAL_GROUP, job.wout - x0)
                window = np.stack(
                    [
                        acts[y0 + fy : y0 + fy + gh, x0 + fx : x0 + fx + gw]
                        for fy in range(side)
                        for fx in range(side)
                    ],
                    axis=2,
                )
                acc = _tile_accumulators(window, wgts[k0:k1])
                acc = check_accumulators(acc, overflow)
                norm_slice = NormParams(job.norm.scale[k0:k1], job.norm.bias[k0:k1], job.norm.shift, job.norm.relu)
                out[y0 : y0 + gh, x0 : x0 + gw, k0:k1] = normalize_quantize(acc, norm_slice, job.o_bits)
    lanes = out.reshape(job.hout, job.wout, job.c32_out, LANES)
    mem.write_words(job.out_addr, pack_bitplanes(lanes, job.o_bits).ravel())
    logger.debug("RBE job %s %dx%dx%d done", job.mode, job.hout, job.wout, job.kout)
    return out[:, :, : job.kout]


def stage_job(job: RbeJob, mem: Memory, acts: QTensor, wgts: QTensor) -> tuple[PackedActivations, PackedWeights]:
    """Pack operands into the job's activation and weight regions."""
    if acts.shape != (job.hin, job.win, job.kin):
        raise DescriptorError(f"activations {acts.shape} do not match job input {(job.hin, job.win, job.kin)}")
    pa = pack_activations(acts, job.i_bits)
    pw = pack_weights(wgts, job.w_bits, job.mode)
    mem.write_words(job.act_addr, pa.buffer)
    mem.write_words(job.wgt_addr, pw.buffer)
    return pa, pw


def execute_timed(job: RbeJob, mem: Memory, calib: RbeCalibration | None = None, overflow: str = "trap") -> CycleReport:
    execute_functional(job, mem, overflow)
    return job_cycles(job, calib)


def job_efficiency(
    report: CycleReport,
    op: OperatingPoint | None = None,
    power_calib: PowerCalibration | None = None,
    activity: str | float = "rbe",
) -> dict[str, float]:
    """Throughput, power, energy and efficiency of a job at an operating point."""
    op = op or OperatingPoint()
    model = power_model(power_calib)
    breakdown = model.breakdown(op.vdd, op.freq_hz, op.vbb, activity)
    seconds = report.total / op.freq_hz
    gops = report.ops / seconds / 1e9
    return {
        "seconds": seconds,
        "gops": gops,
        "binary_gops": gops * report.w_bits * report.i_bits,
        "power_mw": breakdown.total_mw,
        "dynamic_mw": breakdown.dynamic_mw,
        "leakage_mw": breakdown.leakage_mw,
        "energy_uj": breakdown.total_mw * seconds * 1e3,
        "tops_per_w": gops / breakdown.total_mw,
    }


@dataclass(slots=True)
class _Running:
    job_id: int
    job: RbeJob
    segments: list[Segment]
    index: int = -1
    beats_left: int = 0
    latency_left: int = 0
    setup_left: int = 0
    beat_addr: int = 0
    phase: str = "SETUP"


class RbeEngine:
    """Cycle-stepped engine driven by the cluster: one ``advance`` per cycle.

    LOAD and STREAMOUT issue one 9-word contiguous beat per cycle on the engine's own
    interconnect branch; a beat that is not granted stalls the engine for that cycle.
    Results are committed to memory when the job finishes.
    """

    def __init__(
        self,
        mem: Memory,
        calib: RbeCalibration | None = None,
        overflow: str = "trap",
    ) -> None:
        self.mem = mem
        self.calib = calib or RbeCalibration()
        self.overflow = overflow
        self.queue = JobQueue()
        self.current: _Running | None = None
        self.stall_cycles = 0
        self.busy_cycles = 0
        self.timeline: list[dict[str, Any]] = []

    def enqueue(self, job: RbeJob) -> int:
        check(job)
        return self.queue.enqueue(job)

    @property
    def busy(self) -> bool:
        return self.current is not None or bool(self.queue.pending)

    def _start(self, cycle: int) -> None:
        if self.current is not None:
            return
        started = self.queue.start_next()
        if started is None:
            return
        job_id, job = started
        self.current = _Running(job_id, job, job_schedule(job, self.calib), setup_left=self.calib.job_setup_cycles)
        self.timeline.append({"job_id": job_id, "phase": "SETUP", "start": cycle})
        if self.current.setup_left == 0:
            self._next_segment(cycle)

    def _next_segment(self, cycle: int) -> bool:
        run = self.current
        assert run is not None
        run.index += 1
        if run.index >= len(run.segments):
            return False
        seg = run.segments[run.index]
        run.phase = seg.phase
        run.beats_left = seg.beats
        run.latency_left = seg.cycles - seg.beats
        run.beat_addr = seg.addr
        last = self.timeline[-1]
        if last["phase"] != seg.phase or last["job_id"] != run.job_id:
            last["end"] = cycle
            self.timeline.append({"job_id": run.job_id, "phase": seg.phase, "start": cycle})
        return True

    def requests(self, cycle: int) -> list[int]:
        """Word addresses of the beat the engine wants this cycle, if any."""
        self._start(cycle)
        run = self.current
        if run is None or run.setup_left or run.beats_left == 0:
            return []
        words = self.calib.streamer_words
        return [run.beat_addr + 4 * k for k in range(words)]

    def advance(self, cycle: int, granted: bool = True) -> DoneEvent | None:
        """Move one cycle forward; returns the done event on the job's last cycle."""
        self._start(cycle)
        run = self.current
        if run is None:
            return None
        self.busy_cycles += 1
        if run.setup_left:
            run.setup_left -= 1
            if run.setup_left == 0 and not self._next_segment(cycle + 1):
                return self._finish(cycle)
            return None
        if run.beats_left:
            if not granted:
                self.stall_cycles += 1
                return None
            run.beats_left -= 1
            run.beat_addr += 4 * self.calib.streamer_words
        elif run.latency_left:
            run.latency_left -= 1
        if run.beats_left == 0 and run.latency_left == 0:
            if not self._next_segment(cycle + 1):
                return self._finish(cycle)
        return None

    def _finish(self, cycle: int) -> DoneEvent:
        run = self.current
        assert run is not None
        execute_functional(run.job, self.mem, self.overflow)
        self.timeline[-1]["end"] = cycle + 1
        self.current = None
        event = self.queue.on_job_done(cycle + 1)
        logger.info("RBE job %d done at cycle %d", event.job_id, event.cycle)
        return event

    def run_to_completion(self, start_cycle: int = 0) -> list[DoneEvent]:
        """Drain the queue without contention."""
        cycle = start_cycle
        events: list[DoneEvent] = []
        while self.busy:
            event = self.advance(cycle)
            cycle += 1
            if event:
                events.append(event)
        return events
