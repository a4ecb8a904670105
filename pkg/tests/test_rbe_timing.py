from __future__ import annotations

import numpy as np
import pytest

from clustersim.errors import QueueFullError
from clustersim.memory import Memory
from clustersim.quant import CONV1X1, CONV3X3, NormParams, random_qtensor
from clustersim.rbe import (
    GEOMETRY,
    JobQueue,
    RbeEngine,
    RbeJob,
    execute_functional,
    job_cycles,
    job_efficiency,
    job_total_cycles,
    place,
    stage_job,
    throughput_sweep,
)
from clustersim.rbe.timing import sweep_job
from clustersim.schemas import OperatingPoint


def _anchor(w: int = 2, i: int = 4, mode: str = CONV3X3) -> RbeJob:
    return place(sweep_job(mode, w, i))


def test_geometry_has_10368_binary_multipliers() -> None:
    assert GEOMETRY.binary_multipliers == 10368


def test_reference_job_phase_breakdown() -> None:
    report = job_cycles(_anchor())
    assert report.phases == {"LOAD": 56, "COMPUTE": 412, "NORMQUANT": 4, "STREAMOUT": 12}
    assert report.total == sum(report.phases.values()) + report.setup == 488
    assert report.ops == 2 * report.macs


def test_compute_phase_throughput_anchor() -> None:
    report = job_cycles(_anchor())
    assert report.compute_ops_per_cycle == pytest.approx(1610, rel=0.02)


def test_end_to_end_throughput_anchor() -> None:
    report = job_cycles(_anchor())
    assert report.gops == pytest.approx(571, rel=0.05)


def test_binary_throughput_anchor_w8_i4() -> None:
    report = job_cycles(_anchor(w=8))
    assert report.binary_gops == pytest.approx(7100, rel=0.10)


def test_conv1x1_throughput_independent_of_w() -> None:
    rows = [r for r in throughput_sweep() if r["mode"] == CONV1X1 and r["I"] == 4]
    values = [r["ops_per_cycle"] for r in rows]
    assert max(values) == pytest.approx(min(values), rel=0.01)


def test_conv3x3_cycles_linear_in_w() -> None:
    totals = [job_cycles(_anchor(w=w)).total for w in range(2, 9)]
    steps = {b - a for a, b in zip(totals, totals[1:])}
    assert len(steps) == 1
    ratio = job_cycles(_anchor(w=8)).ops_per_cycle / job_cycles(_anchor(w=2)).ops_per_cycle
    assert 0.25 < ratio < 0.40


@pytest.mark.parametrize("mode", [CONV3X3, CONV1X1])
def test_i8_halves_throughput(mode: str) -> None:
    r4 = job_cycles(_anchor(i=4, mode=mode)).ops_per_cycle
    r8 = job_cycles(_anchor(i=8, mode=mode)).ops_per_cycle
    assert r8 / r4 == pytest.approx(0.5, rel=0.10)


def test_sweep_maximum_is_conv3x3_w2() -> None:
    rows = throughput_sweep()
    best = max(rows, key=lambda r: r["ops_per_cycle"])
    assert (best["mode"], best["W"]) == (CONV3X3, 2)
    assert len(rows) == 18
    assert rows == throughput_sweep()


def test_peak_binary_rate_never_exceeds_multiplier_count() -> None:
    for mode in (CONV3X3, CONV1X1):
        for w in range(2, 9):
            for i in range(2, 9):
                assert job_cycles(_anchor(w, i, mode)).binary_macs_compute_peak <= GEOMETRY.binary_multipliers


def test_partial_kout_tile_costs_less_compute() -> None:
    full = job_cycles(place(sweep_job(CONV3X3, 2, 4, kout=64)))
    partial = job_cycles(place(sweep_job(CONV3X3, 2, 4, kout=40)))
    assert partial.phases["COMPUTE"] < full.phases["COMPUTE"]
    assert [t.kout_tile for t in partial.tiles] == [0, 1]


def test_efficiency_at_nominal_point() -> None:
    report = job_cycles(_anchor())
    eff = job_efficiency(report, OperatingPoint(0.8, 420e6, 0.0))
    assert eff["gops"] == pytest.approx(report.gops)
    assert eff["tops_per_w"] == pytest.approx(eff["gops"] / eff["power_mw"])
    assert eff["energy_uj"] > 0


def test_queue_back_pressure_after_two_jobs() -> None:
    queue = JobQueue()
    queue.enqueue("a")
    queue.enqueue("b")
    with pytest.raises(QueueFullError):
        queue.enqueue("c")


def _staged_engine(jobs: int) -> tuple[RbeEngine, list[RbeJob], Memory]:
    rng = np.random.default_rng(9)
    mem = Memory(64 * 1024)
    engine = RbeEngine(mem)
    staged = []
    base = 0
    for _ in range(jobs):
        job = place(RbeJob(CONV3X3, 2, 4, 4, 64, 64, 3, 3, NormParams.identity(64, shift=8)), base)
        base = job.regions()["out"][1]
        stage_job(job, mem, random_qtensor(rng, (3, 3, 64), 4), random_qtensor(rng, (64, 64, 3, 3), 2))
        engine.enqueue(job)
        staged.append(job)
    return engine, staged, mem


def test_single_job_emits_one_done_event_at_model_cycle() -> None:
    engine, jobs, mem = _staged_engine(1)
    events = engine.run_to_completion()
    assert [e.job_id for e in events] == [0]
    assert events[0].cycle == job_cycles(jobs[0]).total
    reference = Memory(mem.size)
    reference.data[:] = mem.data
    execute_functional(jobs[0], reference)
    assert np.array_equal(reference.data, mem.data)


def test_two_jobs_complete_in_fifo_order() -> None:
    engine, jobs, _ = _staged_engine(2)
    events = engine.run_to_completion()
    total = job_cycles(jobs[0]).total
    assert [e.job_id for e in events] == [0, 1]
    assert [e.cycle for e in events] == [total, 2 * total]


def test_denied_beats_delay_completion() -> None:
    engine, jobs, _ = _staged_engine(1)
    cycle = 0
    denied = 0
    done = None
    while done is None:
        wants = engine.requests(cycle)
        grant = not (wants and denied < 5)
        if wants and not grant:
            denied += 1
        done = engine.advance(cycle, granted=grant)
        cycle += 1
    assert engine.stall_cycles == 5
    assert done.cycle == job_cycles(jobs[0]).total + 5


def test_beats_are_nine_contiguous_words() -> None:
    engine, _, _ = _staged_engine(1)
    cycle = 0
    while not engine.requests(cycle):
        engine.advance(cycle)
        cycle += 1
    words = engine.requests(cycle)
    assert len(words) == 9
    assert words == [words[0] + 4 * k for k in range(9)]


def test_closed_form_total_matches_segment_schedule() -> None:
    rng = np.random.default_rng(31)
    for _ in range(40):
        kout = int(rng.integers(1, 101))
        job = RbeJob(
            mode=CONV3X3 if rng.random() < 0.5 else CONV1X1,
            w_bits=int(rng.integers(2, 9)),
            i_bits=int(rng.integers(2, 9)),
            o_bits=int(rng.integers(2, 9)),
            kin=int(rng.integers(1, 101)),
            kout=kout,
            hout=int(rng.integers(1, 11)),
            wout=int(rng.integers(1, 11)),
            norm=NormParams.identity(kout),
        )
        assert job_total_cycles(job) == job_cycles(job).total
