"""Symbolic instructions, programs and the textual assembler.

Operand signature letters: ``r`` GP register, ``n`` NN-RF register, ``i`` immediate,
``l`` label, ``m`` memory operand ``imm(rs)`` / ``imm(rs!)``, ``f`` refresh flag
(``a`` or ``b``), ``e`` event name.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Any

from ..errors import DecodeError

NNRF_SIZE = 6
EVENTS = ("dma_done", "rbe_done")
WIDTH_SUFFIX = {"h": 16, "b": 8, "n": 4, "c": 2}
SIGNEDNESS = ("ss", "uu", "us", "su")

ALU_RRR = ("add", "sub", "and", "or", "xor", "sll", "srl", "sra", "slt", "sltu")
ALU_RRI = ("addi", "andi", "ori", "xori", "slli", "srli", "srai", "slti", "sltiu")
BRANCHES = ("beq", "bne", "blt", "bge", "bltu", "bgeu")
LOADS = {"lw": (4, True), "lh": (2, True), "lhu": (2, False), "lb": (1, True), "lbu": (1, False)}
STORES = {"sw": 4, "sh": 2, "sb": 1}

_ABI_NAMES = {
    "zero": 0, "ra": 1, "sp": 2, "gp": 3, "tp": 4, "t0": 5, "t1": 6, "t2": 7,
    "s0": 8, "fp": 8, "s1": 9, "a0": 10, "a1": 11, "a2": 12, "a3": 13, "a4": 14,
    "a5": 15, "a6": 16, "a7": 17, "s2": 18, "s3": 19, "s4": 20, "s5": 21, "s6": 22,
    "s7": 23, "s8": 24, "s9": 25, "s10": 26, "s11": 27, "t3": 28, "t4": 29, "t5": 30,
    "t6": 31,
}
_MEM_RE = re.compile(r"^(-?(?:0x[0-9a-fA-F]+|\d+))?\((\w+)(!?)\)$")
_DOTP_RE = re.compile(r"^pv\.(dotp|sdotp)\.(ss|uu|us|su)\.([hbnc])(\.sc)?$")
_MLS_RE = re.compile(r"^pv\.mlsdotp\.(ss|uu|us|su)\.([hbnc])$")
_SIMD_RE = re.compile(r"^pv\.(add|sll|srl|sra)\.([hbnc])$")


@dataclass(frozen=True, slots=True)
class MemOperand:
    offset: int
    base: int
    postinc: bool = False

    def __str__(self) -> str:
        return f"{self.offset}(x{self.base}{'!' if self.postinc else ''})"


@dataclass(frozen=True, slots=True)
class OpInfo:
    name: str
    kind: str
    klass: str
    signature: str
    min_args: int
    width: int = 0
    signedness: str = ""
    accumulate: bool = False
    scalar: bool = False


@lru_cache(maxsize=None)
def op_info(op: str) -> OpInfo:
    def info(kind: str, klass: str, sig: str, **extra: Any) -> OpInfo:
        return OpInfo(op, kind, klass, sig, extra.pop("min_args", len(sig)), **extra)

    if op in ALU_RRR:
        return info("alu_rrr", "alu", "rrr")
    if op == "mul":
        return info("alu_rrr", "mul", "rrr")
    if op in ALU_RRI:
        return info("alu_rri", "alu", "rri")
    if op in ("li", "lui"):
        return info(op, "alu", "ri")
    if op == "mv":
        return info("mv", "alu", "rr")
    if op == "nop":
        return info("nop", "alu", "")
    if op in BRANCHES:
        return info("branch", "branch", "rrl")
    if op == "j":
        return info("jump", "jump", "l")
    if op == "jal":
        return info("jump", "jump", "rl")
    if op in LOADS:
        return info("load", "load", "rm")
    if op in STORES:
        return info("store", "store", "rm")
    if op == "lp.setupi":
        return info("hwloop", "hwloop", "iil")
    if op == "lp.setup":
        return info("hwloop", "hwloop", "irl")
    if op in ("p.extract", "p.extractu"):
        return info("extract", "simd", "rrii")
    if op in ("pv.packlo.b", "pv.packhi.b"):
        return info("pack", "simd", "rrr")
    if op == "p.clipu":
        return info("clipu", "alu", "rri")
    if op == "pv.nnlw":
        return info("nnload", "load", "nr")
    if op == "barrier":
        return info("event", "event", "")
    if op == "wait":
        return info("event", "event", "e")
    m = _SIMD_RE.match(op)
    if m:
        sig = "rrr" if m.group(1) == "add" else "rri"
        return info("simd", "simd", sig, width=WIDTH_SUFFIX[m.group(2)])
    m = _DOTP_RE.match(op)
    if m:
        return info(
            "dotp",
            "dotp",
            "rrr",
            width=WIDTH_SUFFIX[m.group(3)],
            signedness=m.group(2),
            accumulate=m.group(1) == "sdotp",
            scalar=bool(m.group(4)),
        )
    m = _MLS_RE.match(op)
    if m:
        return info(
            "macload",
            "macload",
            "rnnfr",
            min_args=3,
            width=WIDTH_SUFFIX[m.group(2)],
            signedness=m.group(1),
            accumulate=True,
        )
    raise DecodeError(f"unknown instruction {op!r}")


def _check_operand(kind: str, value: Any, op: str) -> None:
    if kind == "r":
        ok = isinstance(value, int) and 0 <= value < 32
    elif kind == "n":
        if isinstance(value, int) and not 0 <= value < NNRF_SIZE:
            raise DecodeError(f"{op}: NN-RF index {value} outside [0, {NNRF_SIZE - 1}]")
        ok = isinstance(value, int)
    elif kind == "i":
        ok = isinstance(value, int)
    elif kind == "l":
        ok = isinstance(value, str) and bool(value)
    elif kind == "m":
        ok = isinstance(value, MemOperand) and 0 <= value.base < 32
    elif kind == "f":
        ok = value in ("a", "b")
    else:
        ok = value in EVENTS
    if not ok:
        raise DecodeError(f"{op}: bad operand {value!r} for slot {kind!r}")


@dataclass(frozen=True, slots=True)
class Instruction:
    op: str
    args: tuple[Any, ...] = ()
    line: int = 0

    def __post_init__(self) -> None:
        info = op_info(self.op)
        if not info.min_args <= len(self.args) <= len(info.signature):
            raise DecodeError(f"{self.op}: expected {info.signature!r} operands, got {len(self.args)}")
        for kind, value in zip(info.signature, self.args):
            _check_operand(kind, value, self.op)
        if info.kind == "macload" and len(self.args) == 4:
            raise DecodeError(f"{self.op}: refresh flag needs a pointer register")
        if info.kind == "macload" and len(self.args) == 5 and self.args[0] == self.args[4]:
            raise DecodeError(f"{self.op}: destination and pointer register must differ")
        if info.kind == "extract":
            length, offset = self.args[2], self.args[3]
            if not (1 <= length <= 32 and 0 <= offset < 32 and length + offset <= 32):
                raise DecodeError(f"{self.op}: bit-field {length}@{offset} outside the word")
        if info.kind == "clipu" and not 1 <= self.args[2] <= 31:
            raise DecodeError(f"{self.op}: clip width {self.args[2]} outside [1, 31]")
        if info.kind == "hwloop" and self.args[0] not in (0, 1):
            raise DecodeError(f"{self.op}: loop index must be 0 or 1")

    @property
    def info(self) -> OpInfo:
        return op_info(self.op)

    def labels(self) -> list[str]:
        return [a for kind, a in zip(self.info.signature, self.args) if kind == "l"]

    def __str__(self) -> str:
        parts = []
        for kind, value in zip(self.info.signature, self.args):
            if kind == "r":
                parts.append(f"x{value}")
            elif kind == "n":
                parts.append(f"n{value}")
            else:
                parts.append(str(value))
        return f"{self.op} {', '.join(parts)}".rstrip()


@dataclass(slots=True)
class Program:
    instructions: list[Instruction]
    labels: dict[str, int] = field(default_factory=dict)
    entry: int = 0
    name: str = "program"

    def __post_init__(self) -> None:
        n = len(self.instructions)
        for label, index in self.labels.items():
            if not 0 <= index <= n:
                raise DecodeError(f"label {label!r} points outside the program")
        for ins in self.instructions:
            for label in ins.labels():
                if label not in self.labels:
                    raise DecodeError(f"line {ins.line}: unresolved label {label!r}")
        self._check_loops()

    def _check_loops(self) -> None:
        bodies: list[tuple[int, int, int]] = []
        for index, ins in enumerate(self.instructions):
            if ins.info.kind != "hwloop":
                continue
            end = self.labels[ins.args[2]]
            if end <= index + 1:
                raise DecodeError(f"line {ins.line}: hardware loop body is empty")
            bodies.append((ins.args[0], index + 1, end))
        for level, start, end in bodies:
            for other_level, other_start, other_end in bodies:
                if level == 1 and other_level == 0 and start <= other_start < end and other_end > end:
                    raise DecodeError("inner hardware loop extends past its outer loop")
                if level == 1 and other_level == 0 and other_start <= start - 1 < other_end:
                    raise DecodeError("outer hardware loop set up inside an inner loop body")

    def __len__(self) -> int:
        return len(self.instructions)

    def target(self, label: str) -> int:
        return self.labels[label]


def parse_register(token: str) -> int:
    token = token.strip()
    if token in _ABI_NAMES:
        return _ABI_NAMES[token]
    if re.fullmatch(r"x\d+", token) and int(token[1:]) < 32:
        return int(token[1:])
    raise DecodeError(f"unknown register {token!r}")


def parse_nn_register(token: str) -> int:
    token = token.strip()
    if not re.fullmatch(r"n\d+", token):
        raise DecodeError(f"unknown NN-RF register {token!r}")
    index = int(token[1:])
    if index >= NNRF_SIZE:
        raise DecodeError(f"NN-RF index {index} outside [0, {NNRF_SIZE - 1}]")
    return index


def parse_immediate(token: str) -> int:
    try:
        return int(token.strip(), 0)
    except ValueError as exc:
        raise DecodeError(f"bad immediate {token!r}") from exc


def _parse_operand(kind: str, token: str) -> Any:
    if kind == "r":
        return parse_register(token)
    if kind == "n":
        return parse_nn_register(token)
    if kind == "i":
        return parse_immediate(token)
    if kind == "m":
        m = _MEM_RE.match(token.replace(" ", ""))
        if not m:
            raise DecodeError(f"bad memory operand {token!r}")
        return MemOperand(int(m.group(1) or "0", 0), parse_register(m.group(2)), bool(m.group(3)))
    return token.strip()


def _strip_comment(line: str) -> str:
    for marker in ("#", "//"):
        if marker in line:
            line = line[: line.index(marker)]
    return line.strip()


def assemble(text: str, name: str = "program") -> Program:
    instructions: list[Instruction] = []
    labels: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = _strip_comment(raw)
        while True:
            m = re.match(r"^([A-Za-z_.][\w.]*):\s*(.*)$", line)
            if not m:
                break
            if m.group(1) in labels:
                raise DecodeError(f"line {lineno}: duplicate label {m.group(1)!r}")
            labels[m.group(1)] = len(instructions)
            line = m.group(2)
        if not line:
            continue
        op, *rest = line.split(None, 1)
        info = op_info(op)
        tokens = [t.strip() for t in rest[0].split(",")] if rest else []
        if not info.min_args <= len(tokens) <= len(info.signature):
            raise DecodeError(f"line {lineno}: {op} takes {info.signature!r} operands, got {len(tokens)}")
        args = tuple(_parse_operand(kind, tok) for kind, tok in zip(info.signature, tokens))
        instructions.append(Instruction(info.name, args, lineno))
    return Program(instructions, labels, name=name)


def format_program(program: Program) -> str:
    by_index: dict[int, list[str]] = {}
    for label, index in sorted(program.labels.items(), key=lambda kv: (kv[1], kv[0])):
        by_index.setdefault(index, []).append(label)
    lines: list[str] = []
    for index, ins in enumerate(program.instructions):
        lines.extend(f"{label}:" for label in by_index.get(index, []))
        lines.append(f"    {ins}")
    lines.extend(f"{label}:" for label in by_index.get(len(program.instructions), []))
    return "\n".join(lines) + "\n"


class ProgramBuilder:
    """Incremental program construction used by the kernel generators."""

    def __init__(self, name: str = "program") -> None:
        self.name = name
        self.instructions: list[Instruction] = []
        self.labels: dict[str, int] = {}

    def emit(self, op: str, *args: Any) -> None:
        self.instructions.append(Instruction(op, tuple(args), len(self.instructions) + 1))

    def label(self, name: str) -> None:
        if name in self.labels:
            raise DecodeError(f"duplicate label {name!r}")
        self.labels[name] = len(self.instructions)

    def build(self) -> Program:
        return Program(list(self.instructions), dict(self.labels), name=self.name)
