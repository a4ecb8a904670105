from __future__ import annotations

import json
from pathlib import Path
from typing import Any

import numpy as np
from dotenv import load_dotenv

from clustersim.abb import AbbState, calibrate_delay, min_vdd_report, power_model
from clustersim.config import Calibration, load_calibration, load_settings
from clustersim.kernels import BASELINE_TILE, MACLOAD_TILE, KernelSpec, random_operands, run_matmul
from clustersim.quant import CONV1X1, CONV3X3
from clustersim.rbe import job_cycles, place
from clustersim.rbe.timing import sweep_job
from clustersim.tiler import classify, load_network, schedule_network

NETWORKS = Path(__file__).resolve().parents[2] / "data" / "networks"


def _record(report: dict[str, Any], label: str, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] {label}: {detail}")
    report["passed" if ok else "failed"] += 1
    report["checks"].append({"name": label, "ok": bool(ok), "detail": detail})


def _within(value: float, target: float, rel: float) -> bool:
    return abs(value - target) <= rel * abs(target)


def _audit_rbe(report: dict[str, Any], calib: Calibration) -> None:
    anchor = job_cycles(place(sweep_job(CONV3X3, 2, 4)), calib.rbe)
    _record(report, "RBE compute ops/cycle", _within(anchor.compute_ops_per_cycle, 1610, 0.02), f"{anchor.compute_ops_per_cycle:.1f} (1610 +-2%)")
    _record(report, "RBE end-to-end Gop/s", _within(anchor.gops, 571, 0.05), f"{anchor.gops:.1f} (571 +-5%)")
    w8 = job_cycles(place(sweep_job(CONV3X3, 8, 4)), calib.rbe)
    _record(report, "RBE binary Gop/s W8 I4", _within(w8.binary_gops, 7100, 0.10), f"{w8.binary_gops:.0f} (7100 +-10%)")
    ratio = w8.ops_per_cycle / anchor.ops_per_cycle
    _record(report, "RBE W8/W2 throughput", 0.25 < ratio < 0.40, f"{ratio:.3f} (between 0.25 and 0.40)")
    i8 = job_cycles(place(sweep_job(CONV3X3, 2, 8)), calib.rbe)
    halving = i8.ops_per_cycle / anchor.ops_per_cycle
    _record(report, "RBE I8/I4 throughput", _within(halving, 0.5, 0.10), f"{halving:.3f} (0.5 +-10%)")
    pointwise = [job_cycles(place(sweep_job(CONV1X1, w, 4)), calib.rbe).ops_per_cycle for w in (2, 4, 8)]
    spread = max(pointwise) / min(pointwise) - 1
    _record(report, "RBE 1x1 W-invariance", spread <= 0.01, f"spread {spread:.4f} (<= 1%)")


def _audit_kernels(report: dict[str, Any]) -> None:
    rng = np.random.default_rng(0)
    ml = KernelSpec("matmul", 64, 64, 64, 8, True, MACLOAD_TILE)
    a, b = random_operands(ml, rng)
    _, ml_stats = run_matmul(ml, a, b)
    _, plain_stats = run_matmul(KernelSpec("matmul", 64, 64, 64, 8, False, BASELINE_TILE), a, b)
    util = ml_stats.steady_state_utilization
    _record(report, "MAC&LOAD utilization", util >= 0.94, f"{util:.3f} (>= 0.94)")
    speedup = plain_stats.cycles / ml_stats.cycles
    _record(report, "MAC&LOAD speedup", 1.5 <= speedup <= 1.8, f"{speedup:.3f} (1.5 to 1.8)")
    ratios = []
    for precision in (4, 2):
        spec = KernelSpec("matmul", 64, 64, 64, precision, False, BASELINE_TILE)
        a, b = random_operands(spec, rng)
        _, nn = run_matmul(spec, a, b)
        _, base = run_matmul(spec, a, b, baseline=True)
        ratios.append(base.instructions_retired / nn.instructions_retired)
    low, high = sorted(ratios)
    ok = _within(low, 6, 0.15) and _within(high, 9, 0.15)
    _record(report, "Sub-byte instruction ratios", ok, f"{low:.2f}x / {high:.2f}x (6x and 9x +-15%)")


def _audit_power_and_delay(report: dict[str, Any], calib: Calibration) -> None:
    pc = calib.power
    model = power_model(pc)
    anchor = model.power_mw(pc.anchor_vdd, pc.anchor_freq_hz)
    _record(report, "Power anchor", _within(anchor, pc.anchor_power_mw, 1e-9), f"{anchor:.3f} mW ({pc.anchor_power_mw} mW)")
    ratio = model.dynamic_mw(pc.anchor_vdd, pc.anchor_freq_hz) / model.dynamic_mw(pc.low_vdd, pc.low_freq_hz)
    _record(report, "Dynamic power ratio", _within(ratio, pc.dynamic_ratio, 1e-9), f"{ratio:.3f}x ({pc.dynamic_ratio}x)")
    delay = calibrate_delay(calib.abb)
    hi = delay.fmax(calib.abb.v_high) / 1e6
    lo = delay.fmax(calib.abb.v_low) / 1e6
    ok = _within(hi, calib.abb.f_high_hz / 1e6, 1e-9) and _within(lo, calib.abb.f_low_hz / 1e6, 1e-9)
    _record(report, "Frequency corners", ok, f"{hi:.1f} MHz @ {calib.abb.v_high} V, {lo:.1f} MHz @ {calib.abb.v_low} V")
    state = AbbState.from_calibration(calib.abb)
    state.tick(True)
    seen = [state.tick(False) for _ in range(calib.abb.settle_cycles)]
    target = state.level_voltage(1)
    settled = next((i + 1 for i, v in enumerate(seen) if abs(v - target) < 1e-12), -1)
    _record(report, "Body-bias settle latency", settled == calib.abb.settle_cycles, f"{settled} cycles ({calib.abb.settle_cycles})")


def _audit_min_vdd(report: dict[str, Any], calib: Calibration) -> None:
    result = min_vdd_report(calib.abb.probe_freq_hz, calib.abb, calib.power)
    off, on = result["min_vdd_no_abb"], result["min_vdd_abb"]
    _record(report, "Min Vdd without ABB", abs(off - calib.abb.min_vdd_no_abb) <= 0.01, f"{off:.4f} V ({calib.abb.min_vdd_no_abb} +-0.01)")
    _record(report, "Min Vdd with ABB", abs(on - calib.abb.min_vdd_abb) <= 0.01, f"{on:.4f} V ({calib.abb.min_vdd_abb} +-0.01)")
    saving = result["ratio_vs_nominal"]
    _record(report, "ABB power ratio", abs(saving - 0.70) <= 0.05, f"{saving:.3f} (0.70 +-0.05)")


def _audit_tiler(report: dict[str, Any], calib: Calibration) -> None:
    _, int8 = load_network(NETWORKS / "resnet20_int8.json")
    _, mixed = load_network(NETWORKS / "resnet20_mixed.json")
    base = schedule_network(int8, calib=calib)
    low = schedule_network(mixed, calib=calib)
    classes = sorted(set(classify(base)))
    _record(report, "ResNet-20 boundedness classes", len(classes) == 3, ", ".join(classes))
    _record(
        report,
        "Mixed precision energy",
        low.energy_uj < base.energy_uj,
        f"{low.energy_uj:.2f} uJ vs {base.energy_uj:.2f} uJ",
    )


def run_calibration_audit(calibration_path: str | Path | None = None, quick: bool = False) -> dict[str, Any]:
    root = Path(__file__).resolve().parents[2]
    load_dotenv(root / ".env", override=False)
    calib = load_calibration(calibration_path or load_settings().calibration_path)

    print("STARTING CLUSTERSIM CALIBRATION AUDIT...")
    report: dict[str, Any] = {"passed": 0, "failed": 0, "warnings": [], "checks": []}

    print("\n[1/5] Binary engine throughput...")
    _audit_rbe(report, calib)

    print("\n[2/5] Packed-SIMD kernels...")
    if quick:
        print("[WARN] Skipped in quick mode")
        report["warnings"].append("kernel audit skipped")
    else:
        _audit_kernels(report)

    print("\n[3/5] Power and delay models...")
    _audit_power_and_delay(report, calib)

    print("\n[4/5] Body-bias minimum voltage...")
    if quick:
        print("[WARN] Skipped in quick mode")
        report["warnings"].append("minimum-voltage audit skipped")
    else:
        _audit_min_vdd(report, calib)

    print("\n[5/5] Network scheduling...")
    _audit_tiler(report, calib)

    print("\n" + "=" * 40)
    print("AUDIT COMPLETE")
    print(f"PASSED: {report['passed']}")
    print(f"FAILED: {report['failed']}")
    print(f"WARNINGS: {len(report['warnings'])}")
    if report["failed"]:
        print("\nCALIBRATION DRIFT: anchors above are out of tolerance.")
    else:
        print("\nALL ANCHORS REPRODUCED.")
    return report


def main() -> None:
    report = run_calibration_audit()
    print("\nJSON_SUMMARY")
    print(json.dumps(report, indent=2, ensure_ascii=True))


if __name__ == "__main__":
    main()
