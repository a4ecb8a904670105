from __future__ import annotations

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

from ..errors import RangeError, SimTimeoutError
from ..memory import Memory
from .instructions import LOADS, NNRF_SIZE, STORES, Instruction, OpInfo, Program

logger = logging.getLogger(__name__)

MASK32 = 0xFFFF_FFFF
LANE_WIDTHS = (2, 4, 8, 16)
TAKEN_BRANCH_PENALTY = 1


def to_signed(value: int) -> int:
    value &= MASK32
    return value - (1 << 32) if value & 0x8000_0000 else value


def lanes(value: int, width: int, signed: bool) -> list[int]:
    mask = (1 << width) - 1
    sign = 1 << (width - 1)
    out = []
    for k in range(32 // width):
        v = (value >> (k * width)) & mask
        if signed and v & sign:
            v -= 1 << width
        out.append(v)
    return out


def sdotp(a: int, b: int, acc: int, width: int, signedness: str = "ss", scalar: bool = False) -> int:
    """Sum of lane products added to ``acc``; result wraps to an unsigned 32-bit register value."""
    if width not in LANE_WIDTHS:
        raise RangeError(f"dot-product width {width} not in {LANE_WIDTHS}")
    la = lanes(a, width, signedness[0] == "s")
    lb = lanes(b, width, signedness[1] == "s")
    if scalar:
        lb = [lb[0]] * len(lb)
    return (acc + sum(x * y for x, y in zip(la, lb))) & MASK32


@dataclass(slots=True)
class HwLoop:
    start: int = 0
    end: int = 0
    count: int = 0


@dataclass(slots=True)
class CoreState:
    pc: int = 0
    x: list[int] = field(default_factory=lambda: [0] * 32)
    nnrf: list[int] = field(default_factory=lambda: [0] * NNRF_SIZE)
    hwloops: list[HwLoop] = field(default_factory=lambda: [HwLoop(), HwLoop()])
    cycles: int = 0
    retired: Counter = field(default_factory=Counter)
    histogram: Counter = field(default_factory=Counter)
    dotp_cycles: int = 0
    loop_cycles: int = 0
    loop_dotp_cycles: int = 0
    loads: int = 0
    implicit_loads: int = 0
    stores: int = 0
    stalls: int = 0
    branch_stalls: int = 0
    core_id: int = 0

    def read(self, reg: int) -> int:
        return self.x[reg]

    def write(self, reg: int, value: int) -> None:
        if reg:
            self.x[reg] = value & MASK32

    def architectural(self) -> dict[str, Any]:
        return {
            "pc": self.pc,
            "x": list(self.x),
            "nnrf": list(self.nnrf),
            "hwloops": [(h.start, h.end, h.count) for h in self.hwloops],
        }


@dataclass(slots=True)
class StepResult:
    events: list[str] = field(default_factory=list)
    stalls: int = 0


@dataclass(slots=True)
class Trace:
    cycles: int = 0
    retired: int = 0
    histogram: dict[str, int] = field(default_factory=dict)
    classes: dict[str, int] = field(default_factory=dict)
    dotp_cycles: int = 0
    utilization: float = 0.0
    loop_cycles: int = 0
    loop_dotp_cycles: int = 0
    steady_state_utilization: float = 0.0
    loads: int = 0
    implicit_loads: int = 0
    stores: int = 0
    stalls: int = 0
    trap: str | None = None

    def to_dict(self) -> dict[str, Any]:
        return {
            "cycles": self.cycles,
            "retired": self.retired,
            "histogram": dict(sorted(self.histogram.items())),
            "classes": dict(sorted(self.classes.items())),
            "dotp_cycles": self.dotp_cycles,
            "utilization": round(self.utilization, 6),
            "loop_cycles": self.loop_cycles,
            "loop_dotp_cycles": self.loop_dotp_cycles,
            "steady_state_utilization": round(self.steady_state_utilization, 6),
            "loads": self.loads,
            "implicit_loads": self.implicit_loads,
            "stores": self.stores,
            "stalls": self.stalls,
            "trap": self.trap,
        }


def trace_of(core: CoreState, trap: str | None = None) -> Trace:
    return Trace(
        cycles=core.cycles,
        retired=sum(core.histogram.values()),
        histogram=dict(core.histogram),
        classes=dict(core.retired),
        dotp_cycles=core.dotp_cycles,
        utilization=core.dotp_cycles / core.cycles if core.cycles else 0.0,
        loop_cycles=core.loop_cycles,
        loop_dotp_cycles=core.loop_dotp_cycles,
        steady_state_utilization=core.loop_dotp_cycles / core.loop_cycles if core.loop_cycles else 0.0,
        loads=core.loads,
        implicit_loads=core.implicit_loads,
        stores=core.stores,
        stalls=core.stalls + core.branch_stalls,
        trap=trap,
    )


class _Trap(Exception):
    pass


def _effective(core: CoreState, mem_op: Any) -> int:
    base = core.read(mem_op.base)
    return base if mem_op.postinc else (base + mem_op.offset) & MASK32


def memory_accesses(core: CoreState, ins: Instruction) -> list[tuple[int, bool]]:
    """Addresses the instruction will touch, as (address, is_write) pairs."""
    kind = ins.info.kind
    if kind in ("load", "store"):
        return [(_effective(core, ins.args[1]), kind == "store")]
    if kind == "nnload":
        return [(core.read(ins.args[1]), False)]
    if kind == "macload" and len(ins.args) == 5:
        return [(core.read(ins.args[4]), False)]
    return []


def _check_align(addr: int, size: int) -> None:
    if addr % size:
        raise _Trap(f"misaligned {size}-byte access at {addr:#x}")


def _alu(op: str, a: int, b: int) -> int:
    if op in ("add", "addi"):
        return a + b
    if op == "sub":
        return a - b
    if op in ("and", "andi"):
        return a & b
    if op in ("or", "ori"):
        return a | b
    if op in ("xor", "xori"):
        return a ^ b
    if op in ("sll", "slli"):
        return a << (b & 31)
    if op in ("srl", "srli"):
        return (a & MASK32) >> (b & 31)
    if op in ("sra", "srai"):
        return to_signed(a) >> (b & 31)
    if op in ("slt", "slti"):
        return int(to_signed(a) < to_signed(b))
    if op in ("sltu", "sltiu"):
        return int((a & MASK32) < (b & MASK32))
    if op == "mul":
        return to_signed(a) * to_signed(b)
    raise AssertionError(op)


def _branch_taken(op: str, a: int, b: int) -> bool:
    if op == "beq":
        return a == b
    if op == "bne":
        return a != b
    if op == "blt":
        return to_signed(a) < to_signed(b)
    if op == "bge":
        return to_signed(a) >= to_signed(b)
    if op == "bltu":
        return a < b
    return a >= b


def _pack_lanes(values: list[int], width: int) -> int:
    mask = (1 << width) - 1
    word = 0
    for k, v in enumerate(values):
        word |= (v & mask) << (k * width)
    return word


def _execute(core: CoreState, ins: Instruction, info: OpInfo, mem: Memory, program: Program) -> tuple[int | None, list[str]]:
    """Apply one instruction; returns (branch target index or None, events)."""
    a = ins.args
    kind = info.kind
    if kind == "alu_rrr":
        core.write(a[0], _alu(ins.op, core.read(a[1]), core.read(a[2])))
    elif kind == "alu_rri":
        core.write(a[0], _alu(ins.op, core.read(a[1]), a[2] & MASK32))
    elif kind == "li":
        core.write(a[0], a[1])
    elif kind == "lui":
        core.write(a[0], a[1] << 12)
    elif kind == "mv":
        core.write(a[0], core.read(a[1]))
    elif kind == "load":
        size, signed = LOADS[ins.op]
        addr = _effective(core, a[1])
        _check_align(addr, size)
        value = mem.load(addr, size, signed)
        if a[1].postinc:
            core.write(a[1].base, core.read(a[1].base) + a[1].offset)
        core.write(a[0], value)
        core.loads += 1
    elif kind == "store":
        size = STORES[ins.op]
        addr = _effective(core, a[1])
        _check_align(addr, size)
        mem.store(addr, size, core.read(a[0]))
        if a[1].postinc:
            core.write(a[1].base, core.read(a[1].base) + a[1].offset)
        core.stores += 1
    elif kind == "branch":
        if _branch_taken(ins.op, core.read(a[0]), core.read(a[1])):
            return program.target(a[2]), []
    elif kind == "jump":
        if ins.op == "jal":
            core.write(a[0], core.pc + 4)
        return program.target(a[-1]), []
    elif kind == "hwloop":
        count = a[1] if ins.op == "lp.setupi" else core.read(a[1])
        end = program.target(a[2])
        loop = core.hwloops[a[0]]
        loop.start, loop.end, loop.count = core.pc + 4, end * 4, count
        if count == 0:
            return end, []
    elif kind == "simd":
        w = info.width
        la = lanes(core.read(a[1]), w, ins.op.startswith("pv.sra"))
        if ins.op.startswith("pv.add"):
            out = [x + y for x, y in zip(la, lanes(core.read(a[2]), w, False))]
        elif ins.op.startswith("pv.sll"):
            out = [x << (a[2] % w) for x in la]
        else:
            out = [x >> (a[2] % w) for x in la]
        core.write(a[0], _pack_lanes(out, w))
    elif kind == "extract":
        length, offset = a[2], a[3]
        v = (core.read(a[1]) >> offset) & ((1 << length) - 1)
        if ins.op == "p.extract" and v & (1 << (length - 1)):
            v -= 1 << length
        core.write(a[0], v)
    elif kind == "pack":
        pair = ((core.read(a[1]) & 0xFF) << 8) | (core.read(a[2]) & 0xFF)
        rd = core.read(a[0])
        if ins.op == "pv.packlo.b":
            core.write(a[0], (rd & 0xFFFF_0000) | pair)
        else:
            core.write(a[0], (rd & 0x0000_FFFF) | (pair << 16))
    elif kind == "clipu":
        core.write(a[0], min(max(to_signed(core.read(a[1])), 0), (1 << a[2]) - 1))
    elif kind == "dotp":
        acc = core.read(a[0]) if info.accumulate else 0
        core.write(a[0], sdotp(core.read(a[1]), core.read(a[2]), acc, info.width, info.signedness, info.scalar))
        core.dotp_cycles += 1
    elif kind == "macload":
        refresh = len(a) == 5
        if refresh:
            addr = core.read(a[4])
            _check_align(addr, 4)
            fresh = mem.load(addr, 4)
        value = sdotp(core.nnrf[a[1]], core.nnrf[a[2]], core.read(a[0]), info.width, info.signedness)
        core.write(a[0], value)
        if refresh:
            core.nnrf[a[1] if a[3] == "a" else a[2]] = fresh
            core.write(a[4], addr + 4)
            core.implicit_loads += 1
        core.dotp_cycles += 1
    elif kind == "nnload":
        addr = core.read(a[1])
        _check_align(addr, 4)
        core.nnrf[a[0]] = mem.load(addr, 4)
        core.write(a[1], addr + 4)
        core.loads += 1
    elif kind == "event":
        return None, ["barrier" if ins.op == "barrier" else f"wait:{a[0]}"]
    return None, []


def step(core: CoreState, program: Program, mem: Memory) -> StepResult:
    index = core.pc >> 2
    ins = program.instructions[index]
    info = ins.info
    inner = core.hwloops[0]
    in_inner = inner.count > 0 and inner.start <= core.pc < inner.end
    try:
        target, events = _execute(core, ins, info, mem, program)
    except _Trap as trap:
        return StepResult(events=[f"trap:{trap}"])

    stalls = 0
    if target is not None:
        stalls = TAKEN_BRANCH_PENALTY if info.kind in ("branch", "jump") else 0
        next_index = target
    else:
        next_index = index + 1
        for loop in core.hwloops:
            if loop.count > 0 and next_index * 4 == loop.end:
                loop.count -= 1
                if loop.count > 0:
                    next_index = loop.start >> 2
                    break
    core.pc = next_index * 4
    core.cycles += 1 + stalls
    core.branch_stalls += stalls
    core.retired[info.klass] += 1
    core.histogram[ins.op] += 1
    if in_inner:
        core.loop_cycles += 1
        if info.klass in ("dotp", "macload"):
            core.loop_dotp_cycles += 1
    return StepResult(events=events, stalls=stalls)


def done(core: CoreState, program: Program) -> bool:
    return (core.pc >> 2) >= len(program)


def run(
    program: Program,
    mem: Memory,
    max_cycles: int = 50_000_000,
    core: CoreState | None = None,
) -> Trace:
    core = core or CoreState()
    core.pc = program.entry * 4
    trap = None
    while not done(core, program):
        if core.cycles >= max_cycles:
            raise SimTimeoutError(f"{program.name}: exceeded {max_cycles} cycles", trace=trace_of(core))
        result = step(core, program, mem)
        trapped = [e for e in result.events if e.startswith("trap:")]
        if trapped:
            trap = trapped[0][5:]
            logger.warning("%s: %s at pc=%#x", program.name, trap, core.pc)
            break
    trace = trace_of(core, trap)
    logger.debug("%s: %d cycles, %d retired", program.name, trace.cycles, trace.retired)
    return trace
