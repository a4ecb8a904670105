from __future__ import annotations

import numpy as np
import pytest

from clustersim.errors import DecodeError, RangeError, SimTimeoutError
from clustersim.isa import CoreState, assemble, format_program, run, sdotp, step
from clustersim.isa.core import to_signed
from clustersim.memory import Memory


def _lane_oracle(a: np.ndarray, b: np.ndarray, width: int, signedness: str, scalar: bool) -> np.ndarray:
    n = 32 // width
    shifts = (np.arange(n, dtype=np.uint64) * width)[None, :]
    mask = np.uint64((1 << width) - 1)
    la = ((a.astype(np.uint64)[:, None] >> shifts) & mask).astype(np.int64)
    lb = ((b.astype(np.uint64)[:, None] >> shifts) & mask).astype(np.int64)
    if signedness[0] == "s":
        la = np.where(la >= 1 << (width - 1), la - (1 << width), la)
    if signedness[1] == "s":
        lb = np.where(lb >= 1 << (width - 1), lb - (1 << width), lb)
    if scalar:
        lb = np.repeat(lb[:, :1], n, axis=1)
    return (la * lb).sum(axis=1)


def test_sdotp_examples() -> None:
    assert sdotp(0x04030201, 0x01010101, 10, 8, "uu") == 20
    assert sdotp(0xFFFFFFFF, 0xFFFFFFFF, 0, 2, "uu") == 144
    # -1 * 1 over four byte lanes
    assert to_signed(sdotp(0xFFFFFFFF, 0x01010101, 0, 8, "ss")) == -4


def test_sdotp_rejects_unknown_width() -> None:
    with pytest.raises(RangeError):
        sdotp(0, 0, 0, 3)


def test_sdotp_matches_lane_oracle_on_full_grid() -> None:
    rng = np.random.default_rng(11)
    total = 100_000
    a = rng.integers(0, 1 << 32, size=total, dtype=np.uint64)
    b = rng.integers(0, 1 << 32, size=total, dtype=np.uint64)
    acc = rng.integers(0, 1 << 32, size=total, dtype=np.uint64)
    combos = [(w, s, sc) for w in (2, 4, 8, 16) for s in ("ss", "uu", "us", "su") for sc in (False, True)]
    chunk = total // len(combos)
    for n, (width, sign, scalar) in enumerate(combos):
        part = slice(n * chunk, (n + 1) * chunk)
        expected = (acc[part].astype(np.int64) + _lane_oracle(a[part], b[part], width, sign, scalar)) % (1 << 32)
        got = [sdotp(int(x), int(y), int(z), width, sign, scalar) for x, y, z in zip(a[part], b[part], acc[part])]
        assert got == [int(v) for v in expected]


def test_empty_program_takes_zero_cycles() -> None:
    trace = run(assemble(""), Memory(64))
    assert trace.cycles == 0
    assert trace.retired == 0


def test_x0_writes_are_discarded() -> None:
    core = CoreState()
    run(assemble("addi x0, x0, 5\nli zero, 9\nadd x1, x0, x0"), Memory(64), core=core)
    assert core.x[0] == 0
    assert core.x[1] == 0


def test_hardware_loop_retired_count_closed_form() -> None:
    body, iterations = 3, 7
    text = f"lp.setupi 0, {iterations}, end\n" + "addi x1, x1, 1\n" * body + "end:\n"
    core = CoreState()
    trace = run(assemble(text), Memory(64), core=core)
    assert trace.retired == 1 + body * iterations
    assert trace.cycles == trace.retired
    assert trace.classes.get("branch", 0) == 0
    assert core.x[1] == body * iterations


def test_nested_hardware_loops() -> None:
    text = """
        li x5, 3
        lp.setup 1, x5, outer_end
        addi x2, x2, 1
        lp.setupi 0, 4, inner_end
        addi x1, x1, 1
        addi x3, x3, 2
    inner_end:
        addi x4, x4, 1
    outer_end:
    """
    core = CoreState()
    trace = run(assemble(text), Memory(64), core=core)
    assert (core.x[1], core.x[2], core.x[3], core.x[4]) == (12, 3, 24, 3)
    assert trace.loop_cycles == 24


def test_taken_branch_costs_one_stall() -> None:
    text = """
        li x1, 5
    loop:
        addi x1, x1, -1
        bne x1, x0, loop
    """
    trace = run(assemble(text), Memory(64))
    assert trace.retired == 1 + 2 * 5
    assert trace.stalls == 4
    assert trace.cycles == trace.retired + 4


def test_histogram_sums_to_retired() -> None:
    text = "li x1, 3\nloop:\naddi x1, x1, -1\nsw x1, 0(x0)\nbne x1, x0, loop\n"
    trace = run(assemble(text), Memory(64))
    assert sum(trace.histogram.values()) == trace.retired
    assert sum(trace.classes.values()) == trace.retired


def test_post_increment_load_and_store() -> None:
    mem = Memory(64)
    mem.store(8, 4, 0x11223344)
    mem.store(12, 4, 0xCAFEBABE)
    core = CoreState()
    text = "li x2, 8\nlw x1, 4(x2!)\nlw x3, 4(x2!)\nli x4, 32\nsw x1, 4(x4!)\nlw x5, -4(x4)\n"
    trace = run(assemble(text), mem, core=core)
    assert core.x[1] == 0x11223344
    assert core.x[3] == 0xCAFEBABE
    assert core.x[2] == 16
    assert core.x[4] == 36
    assert core.x[5] == 0x11223344
    assert trace.loads == 3
    assert trace.stores == 1


def test_sub_word_loads_extend_correctly() -> None:
    mem = Memory(16)
    mem.store(0, 4, 0x80FF7F01)
    core = CoreState()
    run(assemble("lb x1, 2(x0)\nlbu x2, 2(x0)\nlh x3, 2(x0)\nlhu x4, 2(x0)"), mem, core=core)
    assert to_signed(core.x[1]) == -1
    assert core.x[2] == 0xFF
    assert to_signed(core.x[3]) == to_signed(0xFFFF80FF)
    assert core.x[4] == 0x80FF


def test_misaligned_access_is_a_trap_event() -> None:
    core = CoreState()
    trace = run(assemble("li x1, 1\nlw x2, 2(x0)\nli x3, 7"), Memory(64), core=core)
    assert trace.trap is not None
    assert "misaligned" in trace.trap
    assert trace.retired == 1
    assert core.x[3] == 0


def test_bitfield_pack_and_clip() -> None:
    core = CoreState()
    text = """
        li x1, 0xF3
        p.extract x2, x1, 4, 0
        p.extractu x3, x1, 4, 4
        li x4, 0x11
        li x5, 0x22
        pv.packlo.b x6, x4, x5
        pv.packhi.b x6, x5, x4
        li x7, -5
        p.clipu x8, x7, 4
        li x9, 100
        p.clipu x10, x9, 4
    """
    run(assemble(text), Memory(16), core=core)
    assert to_signed(core.x[2]) == 3
    assert core.x[3] == 0xF
    assert core.x[6] == 0x22111122
    assert core.x[8] == 0
    assert core.x[10] == 15


def test_simd_add_and_shift() -> None:
    core = CoreState()
    text = "li x1, 0x01FF0203\nli x2, 0x01010101\npv.add.b x3, x1, x2\npv.sra.b x4, x1, 1\npv.srl.b x5, x1, 1\n"
    run(assemble(text), Memory(16), core=core)
    assert core.x[3] == 0x02000304
    assert core.x[4] == 0x00FF0101
    assert core.x[5] == 0x007F0101


def test_dotp_scalar_form_uses_lane_zero() -> None:
    core = CoreState()
    text = "li x1, 0x04030201\nli x2, 0x00000002\npv.dotp.uu.b.sc x3, x1, x2\nli x4, 5\npv.sdotp.uu.b x4, x1, x1\n"
    trace = run(assemble(text), Memory(16), core=core)
    assert core.x[3] == 20
    assert core.x[4] == 5 + 1 + 4 + 9 + 16
    assert trace.dotp_cycles == 2


def test_decode_errors() -> None:
    with pytest.raises(DecodeError):
        assemble("pv.nnlw n6, x1")
    with pytest.raises(DecodeError):
        assemble("j nowhere")
    with pytest.raises(DecodeError):
        assemble("frobnicate x1")
    with pytest.raises(DecodeError):
        assemble("pv.mlsdotp.ss.b x5, n0, n1, a, x5")
    with pytest.raises(DecodeError):
        assemble("lp.setupi 0, 4, end\nend:")


def test_timeout_carries_partial_trace() -> None:
    with pytest.raises(SimTimeoutError) as info:
        run(assemble("spin:\nj spin"), Memory(16), max_cycles=100)
    assert info.value.trace is not None
    assert info.value.trace.cycles >= 100


def test_format_program_reassembles() -> None:
    text = """
        li x8, 0
        lp.setupi 0, 4, body_end
        lw x1, 4(x8!)
        pv.mlsdotp.ss.n x16, n0, n4, b, x12
        pv.nnlw n4, x12
        wait rbe_done
    body_end:
        barrier
    """
    program = assemble(text)
    again = assemble(format_program(program))
    assert [(i.op, i.args) for i in again.instructions] == [(i.op, i.args) for i in program.instructions]
    assert again.labels == program.labels


def test_identical_inputs_give_identical_traces() -> None:
    text = "li x1, 20\nloop:\npv.sdotp.ss.c x2, x1, x1\naddi x1, x1, -1\nbne x1, x0, loop\n"
    first = run(assemble(text), Memory(16)).to_dict()
    second = run(assemble(text), Memory(16)).to_dict()
    assert first == second


def test_step_reports_barrier_event() -> None:
    program = assemble("barrier\nwait dma_done")
    core = CoreState()
    mem = Memory(16)
    assert step(core, program, mem).events == ["barrier"]
    assert step(core, program, mem).events == ["wait:dma_done"]
