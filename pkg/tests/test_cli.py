from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any

import pytest

from clustersim import cli
from clustersim.cluster import DmaDescriptor, dma_cycles
from clustersim.isa import assemble
from clustersim.rbe import job_cycles, load_job

DATA = Path(__file__).resolve().parents[1] / "data"
pytestmark = pytest.mark.usefixtures("clean_env")


def _run(capsys: pytest.CaptureFixture[str], *argv: str) -> tuple[int, dict[str, Any]]:
    code = cli.main(list(argv))
    return code, json.loads(capsys.readouterr().out)


def _rows(path: str | Path) -> list[dict[str, str]]:
    with Path(path).open(encoding="utf-8", newline="") as handle:
        return list(csv.DictReader(handle))


def test_rbe_run_check_reports_match(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    job_path = DATA / "jobs" / "conv3x3_w2_i4.json"
    code, payload = _run(capsys, "--out", str(tmp_path), "rbe", "run", str(job_path), "--check")
    assert code == 0
    assert payload["check"] == "MATCH"
    assert payload["cycles"]["total"] == job_cycles(load_job(job_path)).total
    assert (tmp_path / "conv3x3_w2_i4_output.json").exists()
    assert (tmp_path / "conv3x3_w2_i4_output.bin").exists()
    assert json.loads((tmp_path / "conv3x3_w2_i4_cycles.json").read_text(encoding="utf-8"))["check"] == "MATCH"


def test_rbe_run_pointwise_job_matches_reference(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(
        capsys, "--out", str(tmp_path), "--seed", "4", "rbe", "run", str(DATA / "jobs" / "conv1x1_w4_i8.json"), "--check", "--per-tile"
    )
    assert code == 0
    assert payload["check"] == "MATCH"
    assert payload["cycles"]["tiles"]


def test_rbe_run_rejects_one_bit_weights(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(capsys, "--out", str(tmp_path), "rbe", "run", str(DATA / "jobs" / "invalid_w1.json"))
    assert code == 2
    assert payload["error"] == "JobValidationError"
    assert "W=1" in payload["detail"]


def test_missing_job_file_is_a_validation_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(capsys, "--out", str(tmp_path), "rbe", "run", str(tmp_path / "nope.json"))
    assert code == 2
    assert payload["error"] == "FormatError"


def test_rbe_run_is_byte_identical_under_fixed_seed(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    argv = ("--out", str(tmp_path), "--seed", "7", "rbe", "run", str(DATA / "jobs" / "conv3x3_w2_i4.json"))
    _run(capsys, *argv)
    first = [(tmp_path / name).read_bytes() for name in ("conv3x3_w2_i4_output.bin", "conv3x3_w2_i4_cycles.json")]
    _run(capsys, *argv)
    second = [(tmp_path / name).read_bytes() for name in ("conv3x3_w2_i4_output.bin", "conv3x3_w2_i4_cycles.json")]
    assert first == second


def test_rbe_sweep_writes_table(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(capsys, "--out", str(tmp_path), "rbe", "sweep")
    assert code == 0
    rows = _rows(payload["csv"])
    assert len(rows) == payload["rows"] == 18
    assert (payload["best"]["mode"], payload["best"]["W"]) == ("conv3x3", 2)
    pointwise = [float(r["ops_per_cycle"]) for r in rows if r["mode"] == "conv1x1" and r["I"] == "4"]
    assert max(pointwise) == pytest.approx(min(pointwise), rel=0.01)


def test_isa_run_reports_trace(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(capsys, "--out", str(tmp_path), "isa", "run", str(DATA / "programs" / "dotp_nibble.asm"))
    assert code == 0
    assert payload["trace"]["retired"] == 21
    assert payload["trace"]["histogram"]["pv.sdotp.uu.n"] == 16
    assert payload["trace"]["trap"] is None
    assert (tmp_path / "dotp_nibble_trace.json").exists()


def test_isa_run_empty_program_takes_zero_cycles(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    source = tmp_path / "empty.asm"
    source.write_text("# nothing\n", encoding="utf-8")
    code, payload = _run(capsys, "--out", str(tmp_path), "isa", "run", str(source))
    assert code == 0
    assert payload["trace"]["cycles"] == 0


def test_isa_run_bad_mnemonic_exits_two(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    source = tmp_path / "bad.asm"
    source.write_text("frobnicate x1, x2\n", encoding="utf-8")
    code, payload = _run(capsys, "--out", str(tmp_path), "isa", "run", str(source))
    assert code == 2
    assert payload["error"] == "DecodeError"


def test_kernels_emit_writes_reassemblable_program(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    target = tmp_path / "vecadd.s"
    code, payload = _run(
        capsys, "--out", str(tmp_path), "kernels", "emit", str(DATA / "kernels" / "vecadd_4b.json"), "--output", str(target)
    )
    assert code == 0
    program = assemble(target.read_text(encoding="utf-8"))
    assert len(program.instructions) == payload["instructions"]


def test_kernels_emit_rejects_unknown_fields(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    spec = tmp_path / "spec.json"
    spec.write_text(json.dumps({"kind": "matmul", "lanes": 3}), encoding="utf-8")
    code, payload = _run(capsys, "--out", str(tmp_path), "kernels", "emit", str(spec))
    assert code == 2
    assert payload["error"] == "FormatError"


def test_kernels_bench_small_problem(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(capsys, "--out", str(tmp_path), "kernels", "bench", "--size", "16")
    assert code == 0
    assert [r["precision"] for r in payload["rows"]] == [8, 4, 2]
    assert all("baseline" in r for r in payload["rows"] if r["precision"] < 8)
    assert len(_rows(tmp_path / "kernels_bench.csv")) == 3


def test_net_schedule_resnet20_shows_every_bound(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(capsys, "--out", str(tmp_path), "net", "schedule", str(DATA / "networks" / "resnet20_int8.json"))
    assert code == 0
    assert all(count > 0 for count in payload["boundedness"].values())
    assert len(_rows(payload["csv"])) == payload["layers"] == 31
    assert payload["errors"] == []


def test_net_schedule_mixed_precision_saves_energy(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(
        capsys,
        "--out",
        str(tmp_path),
        "net",
        "schedule",
        str(DATA / "networks" / "resnet20_mixed.json"),
        "--baseline",
        str(DATA / "networks" / "resnet20_int8.json"),
    )
    assert code == 0
    assert payload["energy_uj"] < payload["baseline"]["energy_uj"]
    assert payload["baseline"]["energy_saving"] > 0


def test_net_schedule_tiny_budget_lists_infeasible_layers(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(
        capsys, "--out", str(tmp_path), "net", "schedule", str(DATA / "networks" / "resnet20_int8.json"), "--budget", "1024"
    )
    assert code == 2
    assert payload["errors"]
    assert all(e["budget"] == 1024 and e["binding_buffer"] for e in payload["errors"])


def _abb_scenario(tmp_path: Path) -> Path:
    payload = {
        "name": "short_overclock",
        "vdd": 0.8,
        "freq_hz": 470e6,
        "abb_on": True,
        "seed": 1,
        "decimate": 50,
        "phases": [{"name": "rbe", "cycles": 1500}, {"name": "high", "cycles": 2500}],
    }
    path = tmp_path / "short.json"
    path.write_text(json.dumps(payload), encoding="utf-8")
    return path


def test_abb_run_with_controller_off_keeps_bias_zero(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(capsys, "--out", str(tmp_path), "abb", "run", str(_abb_scenario(tmp_path)), "--abb", "off")
    assert code == 0
    rows = _rows(payload["csv"])
    assert len(rows) == 80
    assert {float(r["vbb"]) for r in rows} == {0.0}


def test_abb_run_trace_is_reproducible(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    scenario = _abb_scenario(tmp_path)
    _, first = _run(capsys, "--out", str(tmp_path / "a"), "abb", "run", str(scenario))
    _, second = _run(capsys, "--out", str(tmp_path / "b"), "abb", "run", str(scenario))
    assert Path(first["csv"]).read_bytes() == Path(second["csv"]).read_bytes()


def test_cluster_run_scenario_with_timeline(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    code, payload = _run(
        capsys, "--out", str(tmp_path), "cluster", "run", str(DATA / "scenarios" / "rbe_dma_overlap.json"), "--timeline"
    )
    assert code == 0
    job = load_job(DATA / "jobs" / "conv3x3_w2_i4.json")
    assert payload["cores"]["0"]["cycles"] >= job_cycles(job).total + 1
    assert payload["cores"]["2"]["cycles"] >= dma_cycles(DmaDescriptor("in", 0, 65536, 64)) + 1
    assert payload["requests"] == payload["grants"]
    assert _rows(payload["timeline_csv"])


def test_doctor_reports_checks(tmp_path: Path, capsys: pytest.CaptureFixture[str], monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setenv("CLUSTERSIM_OUT_DIR", str(tmp_path / "out"))
    code = cli.main(["doctor"])
    report = json.loads(capsys.readouterr().out)
    assert code == 0
    assert report["status"] in {"ok", "warn"}
    names = {c["name"] for c in report["checks"]}
    assert {"calibration_file", "delay_model", "power_anchor", "numpy_version"} <= names


class _StubPreflight:
    def __call__(self, project_root: Path | None = None, calibration_path: str | None = None) -> dict[str, Any]:
        return {"status": "warn", "summary": {"passed": 3, "failed": 0, "warnings": 1}, "checks": []}


def test_doctor_strict_promotes_warnings(capsys: pytest.CaptureFixture[str], monkeypatch: pytest.MonkeyPatch) -> None:
    monkeypatch.setattr(cli, "run_preflight", _StubPreflight())
    code = cli.main(["doctor", "--strict"])
    report = json.loads(capsys.readouterr().out)
    assert code == 1
    assert report["status"] == "fail"
    assert report["strict_override"] == "warnings_promoted_to_failures"


def test_audit_quick_passes_every_anchor(capsys: pytest.CaptureFixture[str]) -> None:
    code = cli.main(["audit", "--quick"])
    out = capsys.readouterr().out
    assert code == 0
    assert "[FAIL]" not in out
    summary = json.loads(out.split("JSON_SUMMARY", 1)[1])
    assert summary["failed"] == 0
    assert len(summary["warnings"]) == 2


def test_bad_calibration_file_exits_two(tmp_path: Path, capsys: pytest.CaptureFixture[str]) -> None:
    bad = tmp_path / "calibration.json"
    bad.write_text(json.dumps({"version": 99}), encoding="utf-8")
    code, payload = _run(capsys, "--calibration", str(bad), "--out", str(tmp_path), "rbe", "sweep")
    assert code == 2
    assert "version" in payload["detail"]
