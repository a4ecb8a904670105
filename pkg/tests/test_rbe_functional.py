from __future__ import annotations

import numpy as np
import pytest

from clustersim.errors import AccumulatorOverflowError, JobValidationError
from clustersim.memory import Memory
from clustersim.quant import (
    CONV1X1,
    CONV3X3,
    NormParams,
    PackedActivations,
    QTensor,
    random_qtensor,
    reference_conv,
    unpack_activations,
)
from clustersim.rbe import (
    JobStrides,
    RbeJob,
    binconv,
    build_uloop,
    check,
    execute_functional,
    execute_timed,
    job_cycles,
    job_from_dict,
    place,
    stage_job,
    validate,
)


def _job(mode: str = CONV3X3, w: int = 2, i: int = 4, o: int = 4, kin: int = 64, kout: int = 64, h: int = 3, wd: int = 3, norm: NormParams | None = None, padding: str = "same") -> RbeJob:
    job = RbeJob(
        mode=mode,
        w_bits=w,
        i_bits=i,
        o_bits=o,
        kin=kin,
        kout=kout,
        hout=h,
        wout=wd,
        norm=norm or NormParams.identity(kout),
        padding=padding,
    )
    return place(job)


def _shift_for(job: RbeJob) -> int:
    peak = job.kin * job.taps * ((1 << job.i_bits) - 1) * ((1 << job.w_bits) - 1)
    return max(0, peak.bit_length() - job.o_bits - 1)


def _run(job: RbeJob, rng: np.random.Generator) -> tuple[np.ndarray, QTensor]:
    side = 3 if job.mode == CONV3X3 else 1
    acts = random_qtensor(rng, (job.hin, job.win, job.kin), job.i_bits)
    wgts = random_qtensor(rng, (job.kout, job.kin, side, side), job.w_bits)
    mem = Memory(job.regions()["out"][1] + 64)
    stage_job(job, mem, acts, wgts)
    execute_functional(job, mem)
    packed = mem.read_words(job.out_addr, job.out_words)
    got = unpack_activations(PackedActivations(packed, (job.hout, job.wout, job.kout), job.o_bits))
    want = reference_conv(acts, wgts, job.norm, job.mode, job.o_bits, job.padding)
    return got.data, want


def test_validate_accepts_non_power_of_two_precisions() -> None:
    assert validate(_job(w=3, i=5, o=6)) == []


def test_validate_rejects_one_bit_weights() -> None:
    problems = validate(_job(w=1))
    assert any("W=1" in p for p in problems)
    with pytest.raises(JobValidationError):
        check(_job(w=1))


def test_validate_rejects_zero_kout() -> None:
    job = RbeJob(CONV3X3, 2, 4, 4, 64, 0, 3, 3, NormParams.identity(0))
    assert any("kout" in p for p in validate(job))


def test_validate_rejects_stride_mismatch_and_overlap() -> None:
    job = _job()
    good = job.expected_strides()
    job.strides = JobStrides(good.act, good.wgt, (1, 2, 3))
    assert any("strides" in p for p in validate(job))
    job = _job()
    job.out_addr = job.act_addr
    assert any("overlaps" in p for p in validate(job))


def test_job_from_dict_accepts_short_mode_names_and_places_regions() -> None:
    job = job_from_dict({"mode": "1x1", "W": 8, "I": 8, "O": 8, "kin": 32, "kout": 32, "hout": 2, "wout": 2})
    assert job.mode == CONV1X1
    assert job.wgt_addr == 4 * job.act_words
    assert job.out_addr == job.wgt_addr + 4 * job.wgt_words
    assert validate(job) == []


def test_binconv_edges() -> None:
    assert binconv(0xFFFFFFFF, 0xFFFFFFFF) == 32
    assert binconv(0x12345678, 0) == 0


def test_binconv_matches_bit_loop() -> None:
    rng = np.random.default_rng(11)
    a = rng.integers(0, 1 << 32, size=2000, dtype=np.uint64).astype(np.uint32)
    b = rng.integers(0, 1 << 32, size=2000, dtype=np.uint64).astype(np.uint32)
    got = binconv(a, b)
    for x, y, g in zip(a.tolist(), b.tolist(), got.tolist()):
        assert g == sum(((x >> k) & 1) & ((y >> k) & 1) for k in range(32))


def test_all_zero_weights_give_normalized_bias() -> None:
    kout = 40
    bias = np.arange(kout, dtype=np.int64) * 8 - 100
    norm = NormParams(np.ones(kout, dtype=np.int64), bias, shift=2, relu=True)
    job = _job(kin=20, kout=kout, h=4, wd=5, norm=norm)
    rng = np.random.default_rng(0)
    acts = random_qtensor(rng, (4, 5, 20), 4)
    wgts = QTensor((kout, 20, 3, 3), np.zeros((kout, 20, 3, 3), dtype=np.int64), 2)
    mem = Memory(job.regions()["out"][1])
    stage_job(job, mem, acts, wgts)
    out = execute_functional(job, mem)
    expected = np.clip(np.maximum(bias >> 2, 0), 0, 15)
    assert np.array_equal(out, np.broadcast_to(expected, (4, 5, kout)))


def test_conv1x1_eight_bit_matches_reference() -> None:
    rng = np.random.default_rng(1)
    job = _job(mode=CONV1X1, w=8, i=8, o=8, kin=32, kout=32, h=4, wd=4)
    job.norm = NormParams.identity(32, shift=_shift_for(job))
    got, want = _run(job, rng)
    assert np.array_equal(got, want.data)


def test_conv3x3_w2_i4_matches_reference() -> None:
    rng = np.random.default_rng(2)
    job = _job()
    job.norm = NormParams.identity(64, shift=_shift_for(job))
    got, want = _run(job, rng)
    assert np.array_equal(got, want.data)


def test_valid_padding_matches_reference() -> None:
    rng = np.random.default_rng(3)
    job = _job(w=3, i=5, o=6, kin=33, kout=17, h=5, wd=7, padding="valid")
    job.norm = NormParams.identity(17, shift=_shift_for(job))
    got, want = _run(job, rng)
    assert np.array_equal(got, want.data)


def test_randomized_jobs_match_reference_bit_exactly() -> None:
    rng = np.random.default_rng(2024)
    for _ in range(1000):
        mode = CONV3X3 if rng.random() < 0.5 else CONV1X1
        w, i, o = (int(v) for v in rng.integers(2, 9, size=3))
        kin, kout = (int(v) for v in rng.integers(1, 129, size=2))
        h, wd = (int(v) for v in rng.integers(1, 17, size=2))
        job = _job(mode, w, i, o, kin, kout, h, wd)
        shift = _shift_for(job)
        job.norm = NormParams(
            rng.integers(1, 4, size=kout),
            rng.integers(-(1 << shift), 1 << shift, size=kout) if shift else np.zeros(kout, dtype=np.int64),
            shift=shift,
            relu=bool(rng.random() < 0.8),
        )
        got, want = _run(job, rng)
        assert np.array_equal(got, want.data), job.to_dict()


def test_conv1x1_equals_conv3x3_with_centre_tap_only() -> None:
    rng = np.random.default_rng(5)
    acts = random_qtensor(rng, (6, 6, 48), 6)
    centre = random_qtensor(rng, (24, 48, 1, 1), 5)
    full = np.zeros((24, 48, 3, 3), dtype=np.int64)
    full[:, :, 1, 1] = centre.data[:, :, 0, 0]
    outs = []
    for mode, wgts in ((CONV1X1, centre), (CONV3X3, QTensor(full.shape, full, 5))):
        job = _job(mode, w=5, i=6, o=7, kin=48, kout=24, h=6, wd=6, norm=NormParams.identity(24, shift=6))
        mem = Memory(job.regions()["out"][1])
        stage_job(job, mem, acts, wgts)
        outs.append(execute_functional(job, mem))
    assert np.array_equal(outs[0], outs[1])


def test_accumulator_overflow_traps_or_wraps() -> None:
    kin = 33280
    job = _job(mode=CONV1X1, w=8, i=8, o=8, kin=kin, kout=1, h=1, wd=1, norm=NormParams.identity(1))
    acts = QTensor((1, 1, kin), np.full((1, 1, kin), 255), 8)
    wgts = QTensor((1, kin, 1, 1), np.full((1, kin, 1, 1), 255), 8)
    mem = Memory(job.regions()["out"][1])
    stage_job(job, mem, acts, wgts)
    with pytest.raises(AccumulatorOverflowError):
        execute_functional(job, mem)
    out = execute_functional(job, mem, overflow="wrap")
    want = reference_conv(acts, wgts, job.norm, CONV1X1, 8, overflow="wrap")
    assert np.array_equal(out, want.data)


def test_uloop_iteration_space_matches_job() -> None:
    job = _job(w=3, i=6, kin=70, kout=40, h=7, wd=4)
    loop = build_uloop(job)
    assert loop.iterations() == 2 * 3 * 2 * 3 * 2 * 3
    assert loop.iterations(upto="group_x") == 2 * 3 * 2
    one = build_uloop(_job(mode=CONV1X1, w=8))
    assert one.level("w_bit").extent == 1


def test_uloop_addresses_follow_layout_strides() -> None:
    job = _job(kin=64, kout=64, h=6, wd=6)
    loop = build_uloop(job)
    s = job.expected_strides()
    step = loop.addresses((1, 1, 1, 1, 0, 1))
    assert step.act_addr == job.act_addr + 3 * s.act[0] + 3 * s.act[1] + s.act[2]
    assert step.wgt_addr == job.wgt_addr + 32 * s.wgt[0] + s.wgt[1] + s.wgt[2]
    assert step.out_addr == job.out_addr + s.out[2] + 3 * s.out[0] + 3 * s.out[1]
    assert sum(1 for _ in loop.iterate()) == loop.iterations()


def test_execute_timed_writes_output_and_reports_cycles() -> None:
    rng = np.random.default_rng(23)
    job = _job(w=3, i=5, o=4, kin=40, kout=36, h=4, wd=5, norm=NormParams.identity(36, shift=6))
    acts = random_qtensor(rng, (job.hin, job.win, job.kin), job.i_bits)
    wgts = random_qtensor(rng, (job.kout, job.kin, 3, 3), job.w_bits)
    mem = Memory(job.regions()["out"][1] + 64)
    stage_job(job, mem, acts, wgts)
    report = execute_timed(job, mem)
    packed = mem.read_words(job.out_addr, job.out_words)
    got = unpack_activations(PackedActivations(packed, (job.hout, job.wout, job.kout), job.o_bits))
    want = reference_conv(acts, wgts, job.norm, job.mode, job.o_bits, job.padding)
    assert np.array_equal(got.data, want.data)
    assert report.total == job_cycles(job).total
    assert all(report.phases[p] > 0 for p in ("LOAD", "COMPUTE", "NORMQUANT", "STREAMOUT"))
