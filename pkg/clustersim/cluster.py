"""Cycle-lockstep cluster: 16 cores, the binary engine and the DMA around a banked TCDM.

Every cycle each master presents at most one request per port. Core and DMA requests
travel on the logarithmic interconnect and are arbitrated round-robin per bank; the
engine's contiguous 9-word beats use their own branch and meet the interconnect only
at the bank multiplexers, which alternate between the two branches under contention.
"""

from __future__ import annotations

import json
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from math import prod
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .config import ClusterCalibration, RbeCalibration
from .errors import DeadlockError, DescriptorError, FormatError, SimTimeoutError
from .isa.core import CoreState, Trace, done, memory_accesses, step, trace_of
from .isa.instructions import Program, assemble
from .memory import Memory
from .quant import random_qtensor
from .rbe.engine import RbeEngine, stage_job
from .rbe.job import RbeJob, check, job_from_dict, load_job

logger = logging.getLogger(__name__)

LIC = "lic"
RBE = "rbe"
DIRECTIONS = ("in", "out")


def core_master(core_id: int) -> str:
    return f"core{core_id}"


def default_masters(cores: int = 16) -> list[str]:
    return [core_master(i) for i in range(cores)] + [f"dma.{d}.{p}" for d in DIRECTIONS for p in (0, 1)]


# TCDM arbitration


@dataclass(frozen=True, slots=True)
class Request:
    master: str
    addr: int
    write: bool = False
    branch: str = LIC


@dataclass(slots=True)
class Arbitration:
    granted: list[Request]
    denied: list[Request]
    rbe_granted: bool = False


class Arbiter:
    """Per-bank round-robin over interconnect masters plus a two-way branch mux."""

    def __init__(self, masters: Sequence[str], banks: int = 32) -> None:
        self.masters = list(masters)
        self.order = {name: i for i, name in enumerate(self.masters)}
        self.banks = banks
        self.pointer = [0] * banks
        self.prefer_rbe = [True] * banks

    def bank_of(self, addr: int) -> int:
        return (addr >> 2) % self.banks

    def arbitrate(self, requests: Iterable[Request]) -> Arbitration:
        per_bank: dict[int, list[Request]] = {}
        rbe: list[Request] = []
        for req in requests:
            if req.branch == RBE:
                rbe.append(req)
            else:
                per_bank.setdefault(self.bank_of(req.addr), []).append(req)
        rbe_banks = {self.bank_of(r.addr) for r in rbe}
        contested = [b for b in sorted(rbe_banks) if b in per_bank]
        rbe_ok = bool(rbe) and all(self.prefer_rbe[b] for b in contested)
        for b in contested:
            self.prefer_rbe[b] = not rbe_ok
        granted: list[Request] = list(rbe) if rbe_ok else []
        denied: list[Request] = [] if rbe_ok else list(rbe)
        n = len(self.masters)
        for bank in sorted(per_bank):
            reqs = per_bank[bank]
            if rbe_ok and bank in rbe_banks:
                denied.extend(reqs)
                continue
            winner = min(reqs, key=lambda r: ((self.order[r.master] - self.pointer[bank]) % n, r.addr))
            self.pointer[bank] = (self.order[winner.master] + 1) % n
            granted.append(winner)
            denied.extend(r for r in reqs if r is not winner)
        return Arbitration(granted=granted, denied=denied, rbe_granted=rbe_ok)


# DMA


@dataclass(slots=True)
class DmaDescriptor:
    """``length`` contiguous bytes repeated over outer dimensions, innermost first."""

    direction: str
    l2_addr: int
    l1_addr: int
    length: int
    counts: tuple[int, ...] = ()
    l2_strides: tuple[int, ...] = ()
    l1_strides: tuple[int, ...] = ()
    at: int = 0

    def __post_init__(self) -> None:
        self.counts = tuple(int(c) for c in self.counts)
        self.l2_strides = tuple(int(s) for s in self.l2_strides) or self._dense()
        self.l1_strides = tuple(int(s) for s in self.l1_strides) or self._dense()

    def _dense(self) -> tuple[int, ...]:
        strides = []
        span = self.length
        for count in self.counts:
            strides.append(span)
            span *= count
        return tuple(strides)

    @property
    def total_bytes(self) -> int:
        return self.length * prod(self.counts)

    def to_dict(self) -> dict[str, Any]:
        return {
            "direction": self.direction,
            "l2_addr": self.l2_addr,
            "l1_addr": self.l1_addr,
            "length": self.length,
            "counts": list(self.counts),
            "l2_strides": list(self.l2_strides),
            "l1_strides": list(self.l1_strides),
            "at": self.at,
        }


def _offsets(length: int, counts: tuple[int, ...], strides: tuple[int, ...]) -> np.ndarray:
    rows = _sorted_outer(counts, strides)
    return (rows[:, None] + np.arange(length, dtype=np.int64)[None, :]).ravel()


def _sorted_outer(counts: tuple[int, ...], strides: tuple[int, ...]) -> np.ndarray:
    """Row offsets in transfer order: innermost outer dimension varies fastest."""
    rows = np.zeros(1, dtype=np.int64)
    for count, stride in zip(counts, strides):
        rows = (stride * np.arange(count, dtype=np.int64)[:, None] + rows[None, :]).ravel()
    return rows


def validate_descriptor(desc: DmaDescriptor, l1_bytes: int, l2_bytes: int) -> None:
    if desc.direction not in DIRECTIONS:
        raise DescriptorError(f"DMA direction {desc.direction!r} not in {DIRECTIONS}")
    if desc.length <= 0 or any(c <= 0 for c in desc.counts) or desc.total_bytes <= 0:
        raise DescriptorError("DMA transfer must move a positive number of bytes")
    if len(desc.counts) > 2:
        raise DescriptorError("DMA descriptors have at most three dimensions")
    if len(desc.l1_strides) != len(desc.counts) or len(desc.l2_strides) != len(desc.counts):
        raise DescriptorError("one stride per outer dimension is required on each side")
    for name, base, strides, size in (
        ("L1", desc.l1_addr, desc.l1_strides, l1_bytes),
        ("L2", desc.l2_addr, desc.l2_strides, l2_bytes),
    ):
        span = _sorted_outer(desc.counts, strides)
        lo = base + int(span.min())
        hi = base + int(span.max()) + desc.length
        if lo < 0 or hi > size:
            raise DescriptorError(f"DMA {name} region [{lo:#x}, {hi:#x}) outside {size} bytes")


def dma_cycles(desc: DmaDescriptor, calib: ClusterCalibration | None = None) -> int:
    """Uncontended transfer time: bandwidth-limited streaming plus a fixed setup."""
    calib = calib or ClusterCalibration()
    if desc.total_bytes <= 0:
        raise DescriptorError("DMA transfer must move a positive number of bytes")
    return -(-desc.total_bytes // calib.dma_bytes_per_cycle) + calib.dma_setup_cycles


@dataclass(slots=True)
class _Transfer:
    transfer_id: int
    desc: DmaDescriptor
    setup_left: int
    beats: int
    l1_rows: np.ndarray
    beat: int = 0
    pending: set[int] = field(default_factory=set)


@dataclass(frozen=True, slots=True)
class DmaDone:
    transfer_id: int
    direction: str
    cycle: int


class DmaEngine:
    """Two independent channels (L2->L1 and L1->L2), each moving 8 bytes per cycle."""

    def __init__(self, l1: Memory, l2: Memory, calib: ClusterCalibration | None = None) -> None:
        self.l1 = l1
        self.l2 = l2
        self.calib = calib or ClusterCalibration()
        self.queues: dict[str, deque[_Transfer]] = {d: deque() for d in DIRECTIONS}
        self.active: dict[str, _Transfer | None] = {d: None for d in DIRECTIONS}
        self.busy_cycles = 0
        self.completed: list[DmaDone] = []
        self._next_id = 0

    @property
    def busy(self) -> bool:
        return any(self.active.values()) or any(self.queues.values())

    def submit(self, desc: DmaDescriptor) -> int:
        validate_descriptor(desc, self.l1.size, self.l2.size)
        width = self.calib.dma_bytes_per_cycle
        transfer = _Transfer(
            transfer_id=self._next_id,
            desc=desc,
            setup_left=self.calib.dma_setup_cycles,
            beats=-(-desc.total_bytes // width),
            l1_rows=_sorted_outer(desc.counts, desc.l1_strides),
        )
        self._next_id += 1
        self.queues[desc.direction].append(transfer)
        logger.debug("DMA %s transfer %d: %d bytes", desc.direction, transfer.transfer_id, desc.total_bytes)
        return transfer.transfer_id

    def _l1_addr(self, transfer: _Transfer, flat: int) -> int:
        row, col = divmod(flat, transfer.desc.length)
        return transfer.desc.l1_addr + int(transfer.l1_rows[row]) + col

    def _port_words(self, transfer: _Transfer) -> dict[int, int]:
        width = self.calib.dma_bytes_per_cycle
        start = transfer.beat * width
        words: dict[int, int] = {}
        for port, offset in enumerate(range(start, min(start + width, transfer.desc.total_bytes), 4)):
            words[port] = self._l1_addr(transfer, offset) & ~3
        return words

    def _activate(self) -> None:
        for direction in DIRECTIONS:
            if self.active[direction] is None and self.queues[direction]:
                transfer = self.queues[direction].popleft()
                self.active[direction] = transfer

    def requests(self, cycle: int) -> list[Request]:
        self._activate()
        out: list[Request] = []
        for direction, transfer in self.active.items():
            if transfer is None or transfer.setup_left:
                continue
            if not transfer.pending:
                transfer.pending = set(self._port_words(transfer))
            words = self._port_words(transfer)
            for port in sorted(transfer.pending):
                out.append(Request(f"dma.{direction}.{port}", words[port], write=direction == "in"))
        return out

    def advance(self, cycle: int, granted_masters: set[str]) -> list[DmaDone]:
        finished: list[DmaDone] = []
        if self.busy:
            self.busy_cycles += 1
        for direction in DIRECTIONS:
            transfer = self.active[direction]
            if transfer is None:
                continue
            if transfer.setup_left:
                transfer.setup_left -= 1
                continue
            transfer.pending = {p for p in transfer.pending if f"dma.{direction}.{p}" not in granted_masters}
            if transfer.pending:
                continue
            transfer.beat += 1
            if transfer.beat == transfer.beats:
                self._copy(transfer.desc)
                self.active[direction] = None
                event = DmaDone(transfer.transfer_id, direction, cycle + 1)
                self.completed.append(event)
                finished.append(event)
                logger.debug("DMA %s transfer %d done at cycle %d", direction, transfer.transfer_id, cycle + 1)
        return finished

    def _copy(self, desc: DmaDescriptor) -> None:
        l2 = desc.l2_addr + _offsets(desc.length, desc.counts, desc.l2_strides)
        l1 = desc.l1_addr + _offsets(desc.length, desc.counts, desc.l1_strides)
        if desc.direction == "in":
            self.l1.data[l1] = self.l2.data[l2]
        else:
            self.l2.data[l2] = self.l1.data[l1]


# Event unit


class EventUnit:
    def __init__(self, cores: Iterable[int]) -> None:
        self.cores = set(cores)
        self.arrived: set[int] = set()
        self.fired: Counter[str] = Counter()
        self.consumed: dict[int, Counter[str]] = {c: Counter() for c in self.cores}
        self.log: list[dict[str, Any]] = []

    def notify(self, event: str, cycle: int) -> None:
        self.fired[event] += 1
        self.log.append({"cycle": cycle, "event": event})

    def consume(self, core: int, event: str) -> bool:
        if self.fired[event] > self.consumed[core][event]:
            self.consumed[core][event] += 1
            return True
        return False

    def arrive(self, core: int) -> None:
        self.arrived.add(core)

    def barrier_ready(self, participants: set[int]) -> bool:
        return bool(self.arrived) and participants <= self.arrived

    def release(self, cycle: int) -> set[int]:
        released, self.arrived = self.arrived, set()
        self.log.append({"cycle": cycle, "event": "barrier", "cores": sorted(released)})
        return released


# Orchestration


RUN, WAIT, BARRIER, DONE, TRAP = "run", "wait", "barrier", "done", "trap"


@dataclass(slots=True)
class _Core:
    core_id: int
    program: Program
    state: CoreState
    status: str = RUN
    ready_at: int = 0
    waiting_for: str | None = None
    finish: int = 0
    trap: str | None = None


def _resume(c: _Core, at: int) -> None:
    c.ready_at = at
    if done(c.state, c.program):
        c.status, c.finish = DONE, at
    else:
        c.status = RUN


@dataclass(slots=True)
class ScheduledJob:
    at: int
    job: RbeJob


@dataclass(slots=True)
class ClusterTrace:
    cycles: int
    cores: dict[int, Trace]
    stalls: dict[str, int]
    bank_conflicts: list[int]
    requests: int
    grants: int
    lic_grants: int
    rbe_grants: int
    max_grants_per_cycle: int
    dma_busy_cycles: int
    rbe_busy_cycles: int
    rbe_stall_cycles: int
    rbe_timeline: list[dict[str, Any]]
    events: list[dict[str, Any]]
    timeline: list[dict[str, Any]] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycles": self.cycles,
            "cores": {str(k): v.to_dict() for k, v in sorted(self.cores.items())},
            "stalls": dict(sorted(self.stalls.items())),
            "bank_conflicts": list(self.bank_conflicts),
            "requests": self.requests,
            "grants": self.grants,
            "lic_grants": self.lic_grants,
            "rbe_grants": self.rbe_grants,
            "max_grants_per_cycle": self.max_grants_per_cycle,
            "dma_busy_cycles": self.dma_busy_cycles,
            "rbe_busy_cycles": self.rbe_busy_cycles,
            "rbe_stall_cycles": self.rbe_stall_cycles,
            "rbe_timeline": self.rbe_timeline,
            "events": self.events,
        }


def run_cluster(
    programs: dict[int, Program],
    rbe_jobs: Sequence[ScheduledJob] = (),
    dma_plan: Sequence[DmaDescriptor] = (),
    tcdm: Memory | None = None,
    l2: Memory | None = None,
    calib: ClusterCalibration | None = None,
    rbe_calib: RbeCalibration | None = None,
    max_cycles: int = 5_000_000,
    deadlock_cycles: int = 10_000,
    record_timeline: bool = False,
    overflow: str = "trap",
) -> ClusterTrace:
    calib = calib or ClusterCalibration()
    tcdm = tcdm or Memory(calib.tcdm_bytes, "tcdm")
    l2 = l2 or Memory(calib.l2_bytes, "l2")
    for cid in programs:
        if not 0 <= cid < calib.cores:
            raise DescriptorError(f"core id {cid} outside [0, {calib.cores})")
    arbiter = Arbiter(default_masters(calib.cores), calib.tcdm_banks)
    dma = DmaEngine(tcdm, l2, calib)
    engine = RbeEngine(tcdm, rbe_calib, overflow)
    events = EventUnit(programs)
    cores = {cid: _Core(cid, prog, CoreState(pc=prog.entry * 4, core_id=cid)) for cid, prog in sorted(programs.items())}
    for c in cores.values():
        if done(c.state, c.program):
            c.status = DONE
    jobs = deque(sorted(rbe_jobs, key=lambda j: j.at))
    plan = deque(sorted(dma_plan, key=lambda d: d.at))
    for desc in plan:
        validate_descriptor(desc, tcdm.size, l2.size)
    for scheduled in jobs:
        check(scheduled.job)

    stalls: Counter[str] = Counter()
    conflicts = [0] * calib.tcdm_banks
    outstanding: set[tuple[str, int]] = set()
    issued = granted_total = lic_grants = rbe_grants = max_grants = 0
    timeline: list[dict[str, Any]] = []
    idle_streak = 0
    cycle = 0

    def snapshot() -> ClusterTrace:
        for c in cores.values():
            c.state.cycles = max(c.state.cycles, c.finish) if c.status in (DONE, TRAP) else cycle
        end = max([cycle] + [c.finish for c in cores.values()])
        return ClusterTrace(
            cycles=end,
            cores={cid: trace_of(c.state, c.trap) for cid, c in cores.items()},
            stalls=dict(stalls),
            bank_conflicts=conflicts,
            requests=issued,
            grants=granted_total,
            lic_grants=lic_grants,
            rbe_grants=rbe_grants,
            max_grants_per_cycle=max_grants,
            dma_busy_cycles=dma.busy_cycles,
            rbe_busy_cycles=engine.busy_cycles,
            rbe_stall_cycles=engine.stall_cycles,
            rbe_timeline=engine.timeline,
            events=events.log,
            timeline=timeline,
        )

    while True:
        active_cores = [c for c in cores.values() if c.status not in (DONE, TRAP)]
        if not active_cores and not jobs and not plan and not dma.busy and not engine.busy:
            break
        if cycle >= max_cycles:
            raise SimTimeoutError(f"cluster exceeded {max_cycles} cycles", trace=snapshot())

        while plan and plan[0].at <= cycle:
            dma.submit(plan.popleft())
        while jobs and jobs[0].at <= cycle and not engine.queue.full:
            engine.enqueue(jobs.popleft().job)

        requests: list[Request] = []
        ready: list[_Core] = []
        core_req: dict[int, Request] = {}
        for c in active_cores:
            if c.status in (WAIT, BARRIER):
                c.state.cycles += 1
                continue
            if c.ready_at > cycle:
                continue
            ready.append(c)
            ins = c.program.instructions[c.state.pc >> 2]
            accesses = memory_accesses(c.state, ins)
            if accesses:
                addr, write = accesses[0]
                req = Request(core_master(c.core_id), addr, write)
                core_req[c.core_id] = req
                requests.append(req)
        requests.extend(dma.requests(cycle))
        rbe_words = engine.requests(cycle)
        requests.extend(Request(RBE, addr, branch=RBE) for addr in rbe_words)

        for req in requests:
            key = (req.master, req.addr)
            if key not in outstanding:
                outstanding.add(key)
                issued += 1
        result = arbiter.arbitrate(requests)
        for req in result.granted:
            outstanding.discard((req.master, req.addr))
        granted_masters = {r.master for r in result.granted}
        granted_total += len(result.granted)
        rbe_grants += sum(1 for r in result.granted if r.branch == RBE)
        lic_grants += sum(1 for r in result.granted if r.branch == LIC)
        max_grants = max(max_grants, len(result.granted))
        for req in result.denied:
            conflicts[arbiter.bank_of(req.addr)] += 1
        denied_masters = {r.master for r in result.denied}
        for master in sorted(denied_masters):
            stalls[master] += 1

        progress = False
        for c in ready:
            req = core_req.get(c.core_id)
            if req is not None and req.master not in granted_masters:
                c.state.stalls += 1
                c.state.cycles += 1
                continue
            progress = True
            res = step(c.state, c.program, tcdm)
            c.ready_at = cycle + 1 + res.stalls
            for ev in res.events:
                if ev.startswith("trap:"):
                    c.status, c.trap, c.finish = TRAP, ev[5:], cycle + 1
                    logger.warning("core %d trapped: %s", c.core_id, c.trap)
                elif ev == "barrier":
                    c.status = BARRIER
                    events.arrive(c.core_id)
                elif ev.startswith("wait:"):
                    name = ev[5:]
                    if not events.consume(c.core_id, name):
                        c.status, c.waiting_for = WAIT, name
            if c.status == RUN and done(c.state, c.program):
                c.status, c.finish = DONE, c.ready_at

        for ev in dma.advance(cycle, granted_masters):
            progress = True
            events.notify("dma_done", ev.cycle)
        if dma.busy:
            progress = True
        if engine.busy:
            rbe_granted = result.rbe_granted or not rbe_words
            progress = progress or rbe_granted
            done_event = engine.advance(cycle, granted=rbe_granted)
            if done_event:
                events.notify("rbe_done", done_event.cycle)

        for c in cores.values():
            if c.status == WAIT and events.consume(c.core_id, c.waiting_for or ""):
                c.waiting_for = None
                _resume(c, cycle + 1)
                progress = True
        participants = {c.core_id for c in cores.values() if c.status not in (DONE, TRAP)}
        if events.barrier_ready(participants):
            for cid in events.release(cycle + 1):
                _resume(cores[cid], cycle + 1)
            progress = True

        if record_timeline:
            timeline.append(
                {
                    "cycle": cycle,
                    "requests": len(requests),
                    "grants": len(result.granted),
                    "denied": len(result.denied),
                    "rbe_phase": engine.current.phase if engine.current else "",
                    "dma_in": int(dma.active["in"] is not None),
                    "dma_out": int(dma.active["out"] is not None),
                }
            )

        idle_streak = 0 if progress or any(c.ready_at > cycle for c in active_cores) else idle_streak + 1
        producers = dma.busy or engine.busy or bool(plan) or bool(jobs)
        blocked = [c for c in cores.values() if c.status in (WAIT, BARRIER)]
        if idle_streak >= deadlock_cycles or (blocked and not producers and all(c.status in (WAIT, BARRIER, DONE, TRAP) for c in cores.values()) and not events.barrier_ready(participants)):
            diagnostic = {
                "cycle": cycle,
                "cores": {c.core_id: {"status": c.status, "pc": c.state.pc, "waiting_for": c.waiting_for} for c in cores.values()},
                "fired": dict(events.fired),
                "barrier_arrived": sorted(events.arrived),
            }
            logger.warning("deadlock suspected at cycle %d", cycle)
            raise DeadlockError(f"no forward progress at cycle {cycle}", diagnostic)
        cycle += 1

    trace = snapshot()
    logger.info("cluster run: %d cycles, %d grants, %d stall cycles", trace.cycles, trace.grants, sum(stalls.values()))
    return trace


# Scenario files


@dataclass(slots=True)
class Scenario:
    name: str
    programs: dict[int, Program]
    rbe_jobs: list[ScheduledJob]
    dma_plan: list[DmaDescriptor]
    tcdm: Memory
    l2: Memory
    max_cycles: int = 5_000_000

    def run(self, calib: ClusterCalibration | None = None, rbe_calib: RbeCalibration | None = None, deadlock_cycles: int = 10_000, record_timeline: bool = False, overflow: str = "trap") -> ClusterTrace:
        return run_cluster(
            self.programs,
            self.rbe_jobs,
            self.dma_plan,
            self.tcdm,
            self.l2,
            calib,
            rbe_calib,
            self.max_cycles,
            deadlock_cycles,
            record_timeline,
            overflow,
        )


def _fill(mem: Memory, entries: list[dict[str, Any]], root: Path) -> None:
    for entry in entries:
        addr = int(entry.get("addr", 0))
        if "words" in entry:
            mem.write_words(addr, np.asarray(entry["words"], dtype=np.uint32))
        elif "bytes" in entry:
            mem.write_bytes(addr, np.asarray(entry["bytes"], dtype=np.uint8))
        elif "file" in entry:
            mem.write_bytes(addr, (root / entry["file"]).read_bytes())
        else:
            raise FormatError(f"memory entry at {addr:#x} needs words, bytes or file")


def load_scenario(path: str | Path, calib: ClusterCalibration | None = None, seed: int = 0) -> Scenario:
    calib = calib or ClusterCalibration()
    source = Path(path)
    try:
        payload = json.loads(source.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"scenario file not found: {source}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"scenario file is not valid JSON: {source}: {exc}") from exc
    root = source.parent
    tcdm = Memory(calib.tcdm_bytes, "tcdm")
    l2 = Memory(calib.l2_bytes, "l2")
    _fill(tcdm, payload.get("tcdm", []), root)
    _fill(l2, payload.get("l2", []), root)

    programs: dict[int, Program] = {}
    for entry in payload.get("cores", []):
        cid = int(entry["core"])
        if "program" in entry:
            text = (root / entry["program"]).read_text(encoding="utf-8")
            name = Path(entry["program"]).stem
        else:
            text, name = entry["asm"], f"core{cid}"
        programs[cid] = assemble(text, name)

    dma_plan = [
        DmaDescriptor(
            direction=d["direction"],
            l2_addr=int(d["l2_addr"]),
            l1_addr=int(d["l1_addr"]),
            length=int(d["length"]),
            counts=tuple(d.get("counts", ())),
            l2_strides=tuple(d.get("l2_strides", ())),
            l1_strides=tuple(d.get("l1_strides", ())),
            at=int(d.get("at", 0)),
        )
        for d in payload.get("dma", [])
    ]

    rng = np.random.default_rng(seed)
    rbe_jobs: list[ScheduledJob] = []
    for entry in payload.get("rbe_jobs", []):
        job_ref = entry["job"]
        job = load_job(root / job_ref) if isinstance(job_ref, str) else job_from_dict(job_ref)
        if entry.get("stage_random", False):
            side = 3 if job.taps == 9 else 1
            stage_job(
                job,
                tcdm,
                random_qtensor(rng, (job.hin, job.win, job.kin), job.i_bits),
                random_qtensor(rng, (job.kout, job.kin, side, side), job.w_bits),
            )
        rbe_jobs.append(ScheduledJob(int(entry.get("at", 0)), job))
    return Scenario(
        name=payload.get("name", source.stem),
        programs=programs,
        rbe_jobs=rbe_jobs,
        dma_plan=dma_plan,
        tcdm=tcdm,
        l2=l2,
        max_cycles=int(payload.get("max_cycles", 5_000_000)),
    )
