"""Program generators for QNN kernels and their measurement harness.

Matmul operands: A is M x K row-major, B is stored column-major (each column of the
K x N matrix packed like a row of A), C is M x N int32 row-major and is accumulated
into (C += A.B). Packed rows hold ``32 / precision`` elements per word, element ``k``
in lane ``k % lanes``.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import FormatError, GenerationError, RangeError
from .isa.core import CoreState, run
from .isa.instructions import MemOperand, Program, ProgramBuilder
from .memory import Memory
from .schemas import OperatingPoint

logger = logging.getLogger(__name__)

KINDS = ("matmul", "vecadd", "normquant")
PRECISIONS = (2, 4, 8)
WIDTH_SUFFIX = {16: "h", 8: "b", 4: "n", 2: "c"}
MACLOAD_TILE = (4, 4)
PLAIN_MAX_ACCUMULATORS = 8
MACLOAD_MAX_ACCUMULATORS = 16
BASELINE_TILE = (2, 4)
OVERRUN_SLACK = 64

# x4..x7 control, x8..x11 A pointers, x12..x15 B pointers, x16..x31 accumulators
R_ROW_A, R_C, R_ROWS, R_COL_B = 4, 5, 6, 7
R_PA, R_PB, R_ACC = 8, 12, 16


@dataclass(slots=True)
class KernelSpec:
    kind: str = "matmul"
    M: int = 1
    N: int = 1
    K: int = 1
    precision: int = 8
    use_macload: bool = True
    acc_tile: tuple[int, int] = MACLOAD_TILE
    shift: int = 0
    out_bits: int = 8

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise GenerationError(f"unknown kernel kind {self.kind!r}")
        if self.precision not in PRECISIONS:
            raise RangeError(f"precision {self.precision} not in {PRECISIONS}")
        if min(self.M, self.N, self.K) < 0:
            raise GenerationError("kernel dimensions must be non-negative")
        self.acc_tile = tuple(self.acc_tile)

    @property
    def lanes(self) -> int:
        return 32 // self.precision

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> KernelSpec:
        return cls(**payload)

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(slots=True)
class KernelStats:
    instructions_retired: int
    cycles: int
    macs_performed: int
    instr_per_mac: float
    dotp_utilization: float
    steady_state_utilization: float = 0.0
    explicit_loads: int = 0
    implicit_loads: int = 0

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["instr_per_mac"] = round(self.instr_per_mac, 6)
        payload["dotp_utilization"] = round(self.dotp_utilization, 6)
        payload["steady_state_utilization"] = round(self.steady_state_utilization, 6)
        return payload


@dataclass(slots=True)
class MatmulLayout:
    M: int
    N: int
    K: int
    kw: int
    a_base: int
    b_base: int
    c_base: int
    size: int


def _round_up(value: int, multiple: int) -> int:
    return -(-value // multiple) * multiple


def _tile_of(spec: KernelSpec) -> tuple[int, int]:
    if spec.use_macload:
        if spec.acc_tile != MACLOAD_TILE:
            raise GenerationError(f"MAC&LOAD kernel supports a {MACLOAD_TILE} tile, got {spec.acc_tile}")
        return MACLOAD_TILE
    rows, cols = spec.acc_tile
    if rows not in (1, 2, 4) or cols not in (1, 2, 4):
        raise GenerationError(f"tile {spec.acc_tile} must use 1, 2 or 4 rows and columns")
    if rows * cols > PLAIN_MAX_ACCUMULATORS:
        raise GenerationError(
            f"tile {spec.acc_tile} needs {rows * cols} accumulators, "
            f"only {PLAIN_MAX_ACCUMULATORS} fit next to operand registers"
        )
    return rows, cols


def matmul_layout(spec: KernelSpec, tile: tuple[int, int] | None = None) -> MatmulLayout:
    rows, cols = tile or _tile_of(spec)
    m = _round_up(spec.M, rows)
    n = _round_up(spec.N, cols)
    k = _round_up(spec.K, spec.lanes)
    kw = k // spec.lanes
    a_base = 0
    b_base = a_base + m * kw * 4 + OVERRUN_SLACK
    c_base = b_base + n * kw * 4 + OVERRUN_SLACK
    size = _round_up(c_base + m * n * 4 + OVERRUN_SLACK, 4)
    return MatmulLayout(m, n, k, kw, a_base, b_base, c_base, size)


def pack_rows(values: np.ndarray, precision: int, padded_k: int) -> np.ndarray:
    """Pack each row of a signed matrix into precision-bit lanes."""
    rows = np.zeros((values.shape[0], padded_k), dtype=np.int64)
    rows[:, : values.shape[1]] = values
    lanes = 32 // precision
    fields = (rows & ((1 << precision) - 1)).astype(np.uint64).reshape(values.shape[0], -1, lanes)
    shifts = (np.arange(lanes, dtype=np.uint64) * np.uint64(precision))
    return (fields << shifts).sum(axis=-1, dtype=np.uint64).astype(np.uint32)


def build_matmul_memory(
    spec: KernelSpec,
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray | None = None,
    tile: tuple[int, int] | None = None,
) -> tuple[Memory, MatmulLayout]:
    layout = matmul_layout(spec, tile)
    lo, hi = -(1 << (spec.precision - 1)), (1 << (spec.precision - 1)) - 1
    for name, arr, shape in (("A", a, (spec.M, spec.K)), ("B", b, (spec.K, spec.N))):
        if arr.shape != shape:
            raise GenerationError(f"{name} has shape {arr.shape}, expected {shape}")
        if arr.size and (arr.min() < lo or arr.max() > hi):
            raise RangeError(f"{name} values outside signed {spec.precision}-bit range")
    mem = Memory(layout.size, name="kernel")
    a_full = np.zeros((layout.M, spec.K), dtype=np.int64)
    a_full[: spec.M] = a
    b_cols = np.zeros((layout.N, spec.K), dtype=np.int64)
    b_cols[: spec.N] = np.asarray(b, dtype=np.int64).T
    mem.write_words(layout.a_base, pack_rows(a_full, spec.precision, layout.K))
    mem.write_words(layout.b_base, pack_rows(b_cols, spec.precision, layout.K))
    c_full = np.zeros((layout.M, layout.N), dtype=np.int64)
    if c is not None:
        c_full[: spec.M, : spec.N] = c
    mem.write_words(layout.c_base, c_full.astype(np.int32).view(np.uint32))
    return mem, layout


def read_matmul_result(mem: Memory, spec: KernelSpec, layout: MatmulLayout) -> np.ndarray:
    words = mem.read_words(layout.c_base, layout.M * layout.N)
    return words.view(np.int32).astype(np.int64).reshape(layout.M, layout.N)[: spec.M, : spec.N]


def _acc(rows_cols: tuple[int, int], r: int, c: int) -> int:
    return R_ACC + r * rows_cols[1] + c


def _emit_tile_pointers(pb: ProgramBuilder, rows: int, cols: int, kwb: int) -> None:
    pb.emit("mv", R_PB, R_COL_B)
    for j in range(1, cols):
        pb.emit("addi", R_PB + j, R_COL_B, j * kwb)
    pb.emit("mv", R_PA, R_ROW_A)
    for i in range(1, rows):
        pb.emit("addi", R_PA + i, R_ROW_A, i * kwb)


def _emit_accumulators(pb: ProgramBuilder, op: str, tile: tuple[int, int], row_bytes: int) -> None:
    for r in range(tile[0]):
        for c in range(tile[1]):
            pb.emit(op, _acc(tile, r, c), MemOperand(r * row_bytes + c * 4, R_C))


def _emit_matmul(
    spec: KernelSpec,
    layout: MatmulLayout,
    tile: tuple[int, int],
    inner_body: Any,
    name: str,
) -> Program:
    pb = ProgramBuilder(name)
    if min(spec.M, spec.N, spec.K) == 0:
        return pb.build()
    rows, cols = tile
    kwb = layout.kw * 4
    row_bytes = layout.N * 4
    pb.emit("li", R_ROW_A, layout.a_base)
    pb.emit("li", R_C, layout.c_base)
    pb.emit("li", R_ROWS, layout.M // rows)
    pb.label("row")
    pb.emit("li", R_COL_B, layout.b_base)
    pb.emit("lp.setupi", 1, layout.N // cols, "row_end")
    _emit_tile_pointers(pb, rows, cols, kwb)
    _emit_accumulators(pb, "lw", tile, row_bytes)
    inner_body(pb, layout)
    pb.label("inner_end")
    _emit_accumulators(pb, "sw", tile, row_bytes)
    pb.emit("addi", R_C, R_C, cols * 4)
    pb.emit("addi", R_COL_B, R_COL_B, cols * kwb)
    pb.label("row_end")
    pb.emit("addi", R_ROW_A, R_ROW_A, rows * kwb)
    pb.emit("addi", R_C, R_C, (rows - 1) * row_bytes)
    pb.emit("addi", R_ROWS, R_ROWS, -1)
    pb.emit("bne", R_ROWS, 0, "row")
    return pb.build()


def gen_matmul(spec: KernelSpec, layout: MatmulLayout | None = None) -> Program:
    if spec.kind != "matmul":
        raise GenerationError(f"gen_matmul cannot build a {spec.kind} kernel")
    tile = _tile_of(spec)
    layout = layout or matmul_layout(spec, tile)
    suffix = WIDTH_SUFFIX[spec.precision]

    def macload_body(pb: ProgramBuilder, lay: MatmulLayout) -> None:
        # n0..n3 hold the A rows, n4 the current B column
        for r in range(4):
            pb.emit("pv.nnlw", r, R_PA + r)
        pb.emit("pv.nnlw", 4, R_PB)
        pb.emit("lp.setupi", 0, lay.kw, "inner_end")
        op = f"pv.mlsdotp.ss.{suffix}"
        for c in range(3):
            for r in range(4):
                if r == 3:
                    pb.emit(op, _acc(tile, r, c), r, 4, "b", R_PB + c + 1)
                else:
                    pb.emit(op, _acc(tile, r, c), r, 4)
        for r in range(4):
            pb.emit(op, _acc(tile, r, 3), r, 4, "a", R_PA + r)
        pb.emit("pv.nnlw", 4, R_PB)

    def plain_body(pb: ProgramBuilder, lay: MatmulLayout) -> None:
        rows, cols = tile
        a_regs = [R_ACC + rows * cols + i for i in range(rows)]
        b_regs = [a_regs[-1] + 1 + j for j in range(cols)]
        pb.emit("lp.setupi", 0, lay.kw, "inner_end")
        for i, reg in enumerate(a_regs):
            pb.emit("lw", reg, MemOperand(4, R_PA + i, True))
        for j, reg in enumerate(b_regs):
            pb.emit("lw", reg, MemOperand(4, R_PB + j, True))
        for r in range(rows):
            for c in range(cols):
                pb.emit(f"pv.sdotp.ss.{suffix}", _acc(tile, r, c), a_regs[r], b_regs[c])

    body = macload_body if spec.use_macload else plain_body
    name = f"matmul_{spec.precision}b_{'ml' if spec.use_macload else 'plain'}"
    return _emit_matmul(spec, layout, tile, body, name)


# baseline unpack scratch: x1..x3 and x11 hold extracted fields, x10 the unpacked B word
_UNPACK_TEMPS = (1, 2, 3, 11)
_UNPACKED_B = 10
_UNPACKED_A = (30, 31)


def _emit_unpack(pb: ProgramBuilder, src: int, dst: int, part: int, precision: int) -> None:
    for q, tmp in enumerate(_UNPACK_TEMPS):
        pb.emit("p.extract", tmp, src, precision, (part * 4 + q) * precision)
    pb.emit("pv.packlo.b", dst, _UNPACK_TEMPS[1], _UNPACK_TEMPS[0])
    pb.emit("pv.packhi.b", dst, _UNPACK_TEMPS[3], _UNPACK_TEMPS[2])


def gen_matmul_baseline_subbyte(spec: KernelSpec, layout: MatmulLayout | None = None) -> Program:
    """Sub-byte matmul on the 8-bit dot-product unit after shift/mask unpacking."""
    if spec.kind != "matmul":
        raise GenerationError(f"baseline generator cannot build a {spec.kind} kernel")
    if spec.precision not in (2, 4):
        raise GenerationError("baseline sub-byte kernel needs precision 2 or 4")
    if spec.acc_tile != BASELINE_TILE:
        raise GenerationError(f"baseline kernel supports a {BASELINE_TILE} tile, got {spec.acc_tile}")
    tile = BASELINE_TILE
    layout = layout or matmul_layout(spec, tile)
    parts = 8 // spec.precision
    raw_a = (24, 25)
    raw_b = (26, 27, 28, 29)

    def body(pb: ProgramBuilder, lay: MatmulLayout) -> None:
        pb.emit("lp.setupi", 0, lay.kw, "inner_end")
        for i, reg in enumerate(raw_a):
            pb.emit("lw", reg, MemOperand(4, R_PA + i, True))
        for j, reg in enumerate(raw_b):
            pb.emit("lw", reg, MemOperand(4, R_PB + j, True))
        for part in range(parts):
            for i in range(2):
                _emit_unpack(pb, raw_a[i], _UNPACKED_A[i], part, spec.precision)
            for j in range(4):
                _emit_unpack(pb, raw_b[j], _UNPACKED_B, part, spec.precision)
                for i in range(2):
                    pb.emit("pv.sdotp.ss.b", _acc(tile, i, j), _UNPACKED_A[i], _UNPACKED_B)

    return _emit_matmul(spec, layout, tile, body, f"matmul_{spec.precision}b_baseline")


def expected_matmul_retired(spec: KernelSpec, baseline: bool = False) -> int:
    """Closed-form retired-instruction count of the generated matmul programs."""
    if min(spec.M, spec.N, spec.K) == 0:
        return 0
    tile = BASELINE_TILE if baseline else _tile_of(spec)
    layout = matmul_layout(spec, tile)
    rows, cols = tile
    tile_setup = rows + cols + 2 * rows * cols + 3
    if baseline:
        body = 6 + (8 // spec.precision) * 44
    elif spec.use_macload:
        body = 17
        tile_setup += 5
    else:
        body = rows + cols + rows * cols
    per_tile = tile_setup + body * layout.kw
    return 3 + (layout.M // rows) * (6 + (layout.N // cols) * per_tile)


def gen_vecadd(spec: KernelSpec, a_base: int = 0, b_base: int | None = None, c_base: int | None = None) -> Program:
    """Lane-wise wrapping add of two packed tensors of ``spec.N`` elements."""
    words = -(-spec.N // spec.lanes)
    b_base = words * 4 if b_base is None else b_base
    c_base = 2 * words * 4 if c_base is None else c_base
    pb = ProgramBuilder(f"vecadd_{spec.precision}b")
    if words == 0:
        return pb.build()
    pb.emit("li", 8, a_base)
    pb.emit("li", 9, b_base)
    pb.emit("li", 10, c_base)
    pb.emit("lp.setupi", 0, words, "end")
    pb.emit("lw", 11, MemOperand(4, 8, True))
    pb.emit("lw", 12, MemOperand(4, 9, True))
    pb.emit(f"pv.add.{WIDTH_SUFFIX[spec.precision]}", 13, 11, 12)
    pb.emit("sw", 13, MemOperand(4, 10, True))
    pb.label("end")
    return pb.build()


def gen_normquant(spec: KernelSpec, acc_base: int, scale_base: int, bias_base: int, out_base: int) -> Program:
    """Per-element ``clip((acc * scale + bias) >> shift)`` to ``out_bits`` bytes."""
    if not 1 <= spec.out_bits <= 8:
        raise RangeError(f"normquant output width {spec.out_bits} outside [1, 8]")
    pb = ProgramBuilder("normquant")
    if spec.N == 0:
        return pb.build()
    pb.emit("li", 8, acc_base)
    pb.emit("li", 9, scale_base)
    pb.emit("li", 10, bias_base)
    pb.emit("li", 11, out_base)
    pb.emit("lp.setupi", 0, spec.N, "end")
    pb.emit("lw", 12, MemOperand(4, 8, True))
    pb.emit("lw", 13, MemOperand(4, 9, True))
    pb.emit("lw", 14, MemOperand(4, 10, True))
    pb.emit("mul", 12, 12, 13)
    pb.emit("add", 12, 12, 14)
    pb.emit("srai", 12, 12, spec.shift)
    pb.emit("p.clipu", 12, 12, spec.out_bits)
    pb.emit("sb", 12, MemOperand(1, 11, True))
    pb.label("end")
    return pb.build()


def generate(spec: KernelSpec) -> Program:
    """Program for any kernel kind, operands laid out back to back from address 0."""
    if spec.kind == "matmul":
        return gen_matmul(spec)
    if spec.kind == "vecadd":
        return gen_vecadd(spec)
    n = spec.N * 4
    return gen_normquant(spec, 0, n, 2 * n, 3 * n)


def load_kernel_spec(path: str | Path) -> KernelSpec:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"kernel spec not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"kernel spec is not valid JSON: {path}: {exc}") from exc
    if not isinstance(payload, dict):
        raise FormatError("kernel spec must be a JSON object")
    try:
        return KernelSpec.from_dict(payload)
    except TypeError as exc:
        raise FormatError(f"bad kernel spec {path}: {exc}") from exc


def measure(program: Program, mem: Memory, macs: int = 0, max_cycles: int = 50_000_000) -> KernelStats:
    core = CoreState()
    trace = run(program, mem, max_cycles=max_cycles, core=core)
    return KernelStats(
        instructions_retired=trace.retired,
        cycles=trace.cycles,
        macs_performed=macs,
        instr_per_mac=trace.retired / macs if macs else 0.0,
        dotp_utilization=trace.utilization,
        steady_state_utilization=trace.steady_state_utilization,
        explicit_loads=trace.loads,
        implicit_loads=trace.implicit_loads,
    )


def random_operands(spec: KernelSpec, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = -(1 << (spec.precision - 1)), (1 << (spec.precision - 1))
    a = rng.integers(lo, hi, size=(spec.M, spec.K), dtype=np.int64)
    b = rng.integers(lo, hi, size=(spec.K, spec.N), dtype=np.int64)
    return a, b


def run_matmul(
    spec: KernelSpec,
    a: np.ndarray,
    b: np.ndarray,
    c: np.ndarray | None = None,
    baseline: bool = False,
) -> tuple[np.ndarray, KernelStats]:
    tile = BASELINE_TILE if baseline else _tile_of(spec)
    mem, layout = build_matmul_memory(spec, a, b, c, tile)
    program = gen_matmul_baseline_subbyte(spec, layout) if baseline else gen_matmul(spec, layout)
    stats = measure(program, mem, macs=spec.M * spec.N * spec.K)
    return read_matmul_result(mem, spec, layout), stats


def bench(
    size: int = 64,
    operating_point: OperatingPoint | None = None,
    cores: int = 16,
    seed: int = 0,
) -> list[dict[str, Any]]:
    """Benchmark table of the matmul variants at 8, 4 and 2 bits on a size^3 problem."""
    op = operating_point or OperatingPoint()
    rng = np.random.default_rng(seed)
    rows: list[dict[str, Any]] = []
    for precision in (8, 4, 2):
        ml = KernelSpec("matmul", size, size, size, precision, True, MACLOAD_TILE)
        plain = KernelSpec("matmul", size, size, size, precision, False, BASELINE_TILE)
        a, b = random_operands(ml, rng)
        _, ml_stats = run_matmul(ml, a, b)
        _, plain_stats = run_matmul(plain, a, b)
        row: dict[str, Any] = {
            "precision": precision,
            "macload": ml_stats.to_dict(),
            "plain": plain_stats.to_dict(),
            "macload_speedup": round(plain_stats.cycles / ml_stats.cycles, 4),
            "macload_gops": round(2 * ml_stats.macs_performed / ml_stats.cycles * op.freq_hz * cores / 1e9, 3),
        }
        if precision in (2, 4):
            _, base_stats = run_matmul(plain, a, b, baseline=True)
            row["baseline"] = base_stats.to_dict()
            row["baseline_vs_plain_instructions"] = round(
                base_stats.instructions_retired / plain_stats.instructions_retired, 4
            )
            row["baseline_vs_macload_instructions"] = round(
                base_stats.instructions_retired / ml_stats.instructions_retired, 4
            )
        logger.info("bench %d-bit: speedup %.3f", precision, row["macload_speedup"])
        rows.append(row)
    return rows
