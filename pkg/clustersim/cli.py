from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from dotenv import load_dotenv

from .abb import frequency_sweep, load_abb_scenario, min_vdd_report
from .checks import run_calibration_audit
from .cluster import load_scenario
from .config import Calibration, Settings, load_calibration, load_settings
from .errors import ClusterSimError, FormatError, SimRuntimeError, SimValidationError
from .isa import assemble, format_program, run
from .kernels import bench, generate, load_kernel_spec
from .memory import Memory
from .preflight import run_preflight
from .quant import QTensor, random_qtensor, reference_conv, save_qtensor
from .rbe import check, execute_functional, job_cycles, job_efficiency, load_job, stage_job, throughput_sweep
from .schemas import OperatingPoint, RunConfig
from .tiler import energy_saving, load_network, schedule_network
from .utils.reports import flatten, write_json, write_rows

logger = logging.getLogger(__name__)

PROJECT_ROOT = Path(__file__).resolve().parents[1]


def _json_print(payload: Any) -> None:
    print(json.dumps(payload, indent=2, ensure_ascii=True))


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clustersim", description="Heterogeneous AI-IoT cluster simulator")
    parser.add_argument("--seed", type=int, default=None, help="RNG seed (default CLUSTERSIM_SEED)")
    parser.add_argument("--out", default=None, help="Output directory (default CLUSTERSIM_OUT_DIR)")
    parser.add_argument("--calibration", default=None, help="Calibration file (default CLUSTERSIM_CALIBRATION)")
    parser.add_argument("--vdd", type=float, default=None, help="Operating point supply voltage")
    parser.add_argument("--freq-mhz", type=float, default=None, help="Operating point clock")
    sub = parser.add_subparsers(dest="command", required=True)

    rbe = sub.add_parser("rbe", help="Binary engine jobs and throughput sweeps")
    rbe_sub = rbe.add_subparsers(dest="action", required=True)
    rbe_run = rbe_sub.add_parser("run", help="Execute one job on random operands")
    rbe_run.add_argument("job")
    rbe_run.add_argument("--check", action="store_true", help="Compare the output against the reference convolution")
    rbe_run.add_argument("--per-tile", action="store_true")
    rbe_sweep = rbe_sub.add_parser("sweep", help="Throughput table over modes and precisions")
    rbe_sweep.add_argument("--kin", type=int, default=64)
    rbe_sweep.add_argument("--kout", type=int, default=64)

    isa = sub.add_parser("isa", help="Core emulator")
    isa_sub = isa.add_subparsers(dest="action", required=True)
    isa_run = isa_sub.add_parser("run", help="Assemble and run a program on one core")
    isa_run.add_argument("program")
    isa_run.add_argument("--max-cycles", type=int, default=50_000_000)

    kernels = sub.add_parser("kernels", help="Generated QNN kernels")
    kernels_sub = kernels.add_subparsers(dest="action", required=True)
    kbench = kernels_sub.add_parser("bench", help="Matmul variants at 8, 4 and 2 bits")
    kbench.add_argument("--size", type=int, default=64)
    kbench.add_argument("--cores", type=int, default=16)
    kemit = kernels_sub.add_parser("emit", help="Write a generated kernel as assembly")
    kemit.add_argument("spec")
    kemit.add_argument("--output", default=None)

    net = sub.add_parser("net", help="Network tiling and scheduling")
    net_sub = net.add_subparsers(dest="action", required=True)
    nsched = net_sub.add_parser("schedule", help="Per-layer schedule of a network file")
    nsched.add_argument("network")
    nsched.add_argument("--budget", type=int, default=None, help="L1 budget in bytes")
    nsched.add_argument("--baseline", default=None, help="Network file to compare energy against")

    abb = sub.add_parser("abb", help="Adaptive body-bias loop")
    abb_sub = abb.add_subparsers(dest="action", required=True)
    abb_run = abb_sub.add_parser("run", help="Simulate a phase scenario")
    abb_run.add_argument("scenario")
    abb_run.add_argument("--abb", choices=["on", "off"], default=None, help="Override the scenario's controller switch")
    abb_run.add_argument("--decimate", type=int, default=None)
    abb_min = abb_sub.add_parser("minvdd", help="Lowest error-free supply with and without bias")
    abb_min.add_argument("--probe-mhz", type=float, default=None)
    abb_sweep = abb_sub.add_parser("sweep", help="Minimum supply over a frequency sweep")
    abb_sweep.add_argument("--freqs-mhz", type=float, nargs="+", default=None)

    cluster = sub.add_parser("cluster", help="Cluster scenarios")
    cluster_sub = cluster.add_subparsers(dest="action", required=True)
    crun = cluster_sub.add_parser("run", help="Run cores, DMA and binary engine jobs together")
    crun.add_argument("scenario")
    crun.add_argument("--timeline", action="store_true", help="Write the per-cycle timeline CSV")

    doctor = sub.add_parser("doctor", help="Run environment and calibration preflight checks")
    doctor.add_argument("--strict", action="store_true", help="Treat warnings as failures")

    audit = sub.add_parser("audit", help="Check every calibration anchor")
    audit.add_argument("--quick", action="store_true", help="Skip the kernel and minimum-voltage sections")

    return parser


def _run_config(args: argparse.Namespace, settings: Settings) -> RunConfig:
    op = OperatingPoint()
    if args.vdd is not None:
        op.vdd = args.vdd
    if args.freq_mhz is not None:
        op.freq_hz = args.freq_mhz * 1e6
    scenario = next((getattr(args, k) for k in ("job", "program", "spec", "network", "scenario") if getattr(args, k, None)), None)
    return RunConfig(
        subcommand=" ".join(p for p in (args.command, getattr(args, "action", None)) if p),
        scenario=Path(scenario) if scenario else None,
        out_dir=Path(args.out) if args.out else settings.out_dir,
        seed=settings.seed if args.seed is None else args.seed,
        operating_point=op,
    )


def _rbe_run(args: argparse.Namespace, cfg: RunConfig, calib: Calibration, overflow: str) -> dict[str, Any]:
    job = check(load_job(args.job))
    rng = np.random.default_rng(cfg.seed)
    side = 3 if job.taps == 9 else 1
    acts = random_qtensor(rng, (job.hin, job.win, job.kin), job.i_bits)
    wgts = random_qtensor(rng, (job.kout, job.kin, side, side), job.w_bits)
    mem = Memory(job.regions()["out"][1] + 64, "tcdm")
    stage_job(job, mem, acts, wgts)
    out = execute_functional(job, mem, overflow)
    report = job_cycles(job, calib.rbe)
    stem = Path(args.job).stem
    tensor = save_qtensor(QTensor(out.shape, out, job.o_bits), cfg.out_dir / f"{stem}_output.json")
    payload: dict[str, Any] = {
        "job": job.to_dict(),
        "cycles": report.to_dict(per_tile=args.per_tile),
        "efficiency": {k: round(v, 6) for k, v in job_efficiency(report, cfg.operating_point, calib.power).items()},
        "output": str(tensor),
    }
    if args.check:
        expected = reference_conv(acts, wgts, job.norm, job.mode, job.o_bits, job.padding, overflow)
        if not np.array_equal(expected.data, out):
            mismatched = int(np.count_nonzero(expected.data != out))
            raise SimRuntimeError(f"output differs from the reference convolution at {mismatched} positions")
        payload["check"] = "MATCH"
    payload["report"] = str(write_json(cfg.out_dir / f"{stem}_cycles.json", payload))
    return payload


def _rbe_sweep(args: argparse.Namespace, cfg: RunConfig, calib: Calibration) -> dict[str, Any]:
    rows = throughput_sweep(calib.rbe, kin=args.kin, kout=args.kout)
    path = write_rows(cfg.out_dir / "rbe_sweep.csv", list(rows[0]), rows)
    best = max(rows, key=lambda r: r["ops_per_cycle"])
    return {"rows": len(rows), "csv": str(path), "best": best}


def _isa_run(args: argparse.Namespace, cfg: RunConfig, calib: Calibration) -> dict[str, Any]:
    source = Path(args.program)
    try:
        text = source.read_text(encoding="utf-8")
    except FileNotFoundError as exc:
        raise FormatError(f"program not found: {source}") from exc
    program = assemble(text, source.stem)
    trace = run(program, Memory(calib.cluster.tcdm_bytes, "tcdm"), max_cycles=args.max_cycles)
    payload = {"program": program.name, "instructions": len(program.instructions), "trace": trace.to_dict()}
    payload["report"] = str(write_json(cfg.out_dir / f"{source.stem}_trace.json", payload))
    return payload


def _kernels_bench(args: argparse.Namespace, cfg: RunConfig) -> dict[str, Any]:
    rows = bench(args.size, cfg.operating_point, args.cores, cfg.seed)
    path = write_json(cfg.out_dir / "kernels_bench.json", rows)
    write_rows(cfg.out_dir / "kernels_bench.csv", list(flatten(rows[-1])), (flatten(r) for r in rows))
    return {"size": args.size, "rows": rows, "report": str(path)}


def _kernels_emit(args: argparse.Namespace, cfg: RunConfig) -> dict[str, Any]:
    spec = load_kernel_spec(args.spec)
    program = generate(spec)
    target = Path(args.output) if args.output else cfg.out_dir / f"{program.name}.s"
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(format_program(program), encoding="utf-8")
    return {"spec": spec.to_dict(), "program": program.name, "instructions": len(program.instructions), "path": str(target)}


def _net_schedule(args: argparse.Namespace, cfg: RunConfig, calib: Calibration) -> tuple[dict[str, Any], int]:
    name, layers = load_network(args.network)
    schedule = schedule_network(layers, cfg.operating_point, calib, args.budget, name, collect_errors=True)
    payload = schedule.summary()
    payload["csv"] = str(schedule.write_csv(cfg.out_dir / f"{name}_schedule.csv"))
    if args.baseline:
        base_name, base_layers = load_network(args.baseline)
        baseline = schedule_network(base_layers, cfg.operating_point, calib, args.budget, base_name)
        payload["baseline"] = {
            "network": base_name,
            "energy_uj": round(baseline.energy_uj, 6),
            "latency_cycles": baseline.latency_cycles,
            "energy_saving": round(energy_saving(schedule, baseline), 6),
        }
    return payload, 2 if schedule.errors else 0


def _abb_run(args: argparse.Namespace, cfg: RunConfig, calib: Calibration) -> dict[str, Any]:
    scenario = load_abb_scenario(args.scenario, calib.abb)
    if args.seed is not None:
        scenario.seed = args.seed
    abb_on = None if args.abb is None else args.abb == "on"
    trace = scenario.run(calib.abb, calib.power, abb_on)
    decimate = args.decimate or scenario.decimate
    path = trace.write_csv(cfg.out_dir / f"{scenario.name}_trace.csv", decimate=decimate)
    payload = trace.to_dict()
    payload["scenario"] = scenario.name
    payload["csv"] = str(path)
    return payload


def _cluster_run(args: argparse.Namespace, cfg: RunConfig, calib: Calibration, settings: Settings, overflow: str) -> dict[str, Any]:
    scenario = load_scenario(args.scenario, calib.cluster, cfg.seed)
    trace = scenario.run(calib.cluster, calib.rbe, settings.deadlock_cycles, args.timeline, overflow)
    payload = trace.to_dict()
    payload["scenario"] = scenario.name
    if args.timeline:
        rows = trace.timeline
        fields = list(rows[0]) if rows else ["cycle"]
        payload["timeline_csv"] = str(write_rows(cfg.out_dir / f"{scenario.name}_timeline.csv", fields, rows))
    payload["report"] = str(write_json(cfg.out_dir / f"{scenario.name}_cluster.json", payload))
    return payload


def _dispatch(args: argparse.Namespace, settings: Settings) -> int:
    if args.command == "doctor":
        report = run_preflight(project_root=PROJECT_ROOT, calibration_path=args.calibration)
        if args.strict and report.get("summary", {}).get("warnings", 0) > 0 and report["status"] != "fail":
            report["status"] = "fail"
            report["strict_override"] = "warnings_promoted_to_failures"
        _json_print(report)
        return 0 if report["status"] != "fail" else 1

    if args.command == "audit":
        report = run_calibration_audit(args.calibration or settings.calibration_path, quick=args.quick)
        print("\nJSON_SUMMARY")
        _json_print(report)
        return 1 if report["failed"] else 0

    cfg = _run_config(args, settings)
    calib = load_calibration(args.calibration or settings.calibration_path)
    overflow = "trap" if settings.overflow_trap else "wrap"
    logger.info("run config: %s", cfg.to_dict())

    if args.command == "rbe" and args.action == "run":
        _json_print(_rbe_run(args, cfg, calib, overflow))
        return 0

    if args.command == "rbe" and args.action == "sweep":
        _json_print(_rbe_sweep(args, cfg, calib))
        return 0

    if args.command == "isa":
        _json_print(_isa_run(args, cfg, calib))
        return 0

    if args.command == "kernels" and args.action == "bench":
        _json_print(_kernels_bench(args, cfg))
        return 0

    if args.command == "kernels" and args.action == "emit":
        _json_print(_kernels_emit(args, cfg))
        return 0

    if args.command == "net":
        payload, code = _net_schedule(args, cfg, calib)
        _json_print(payload)
        return code

    if args.command == "abb" and args.action == "run":
        _json_print(_abb_run(args, cfg, calib))
        return 0

    if args.command == "abb" and args.action == "minvdd":
        freq = args.probe_mhz * 1e6 if args.probe_mhz else calib.abb.probe_freq_hz
        _json_print(min_vdd_report(freq, calib.abb, calib.power, calib.abb.v_high, cfg.seed))
        return 0

    if args.command == "abb" and args.action == "sweep":
        freqs = [f * 1e6 for f in args.freqs_mhz] if args.freqs_mhz else None
        rows = frequency_sweep(freqs, calib.abb, cfg.seed) if freqs else frequency_sweep(calib=calib.abb, seed=cfg.seed)
        path = write_rows(cfg.out_dir / "abb_sweep.csv", list(rows[0]), rows)
        _json_print({"rows": rows, "csv": str(path)})
        return 0

    if args.command == "cluster":
        _json_print(_cluster_run(args, cfg, calib, settings, overflow))
        return 0

    raise SimValidationError(f"unknown command {args.command!r}")


def main(argv: Sequence[str] | None = None) -> int:
    load_dotenv(PROJECT_ROOT / ".env", override=False)

    settings = load_settings()
    logging.basicConfig(
        level=getattr(logging, settings.log_level, logging.WARNING),
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    parser = _build_parser()
    args = parser.parse_args(argv)

    try:
        return _dispatch(args, settings)
    except SimValidationError as exc:
        _json_print({"error": type(exc).__name__, "detail": str(exc)})
        return 2
    except ClusterSimError as exc:
        _json_print({"error": type(exc).__name__, "detail": str(exc)})
        return 1
    except FileNotFoundError as exc:
        _json_print({"error": "FileNotFoundError", "detail": str(exc)})
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
