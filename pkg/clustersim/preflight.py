from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Any

import numpy as np
from dotenv import load_dotenv

from .abb.delay import calibrate_delay
from .abb.power import power_model
from .config import Calibration, load_calibration, load_settings
from .errors import ClusterSimError

MIN_NUMPY = (2, 0)


def _numpy_version() -> tuple[int, ...]:
    parts = []
    for piece in np.__version__.split(".")[:2]:
        digits = "".join(ch for ch in piece if ch.isdigit())
        parts.append(int(digits or 0))
    return tuple(parts)


def _probe_writable(directory: Path) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    with tempfile.NamedTemporaryFile(dir=directory, prefix=".preflight_", delete=True) as handle:
        handle.write(b"ok")


def run_preflight(project_root: str | Path | None = None, calibration_path: str | Path | None = None) -> dict[str, Any]:
    root = Path(project_root) if project_root else Path(__file__).resolve().parents[1]
    load_dotenv(root / ".env", override=False)
    settings = load_settings()

    checks: list[dict[str, Any]] = []

    def add(name: str, ok: bool, severity: str, detail: str) -> None:
        checks.append({"name": name, "ok": bool(ok), "severity": severity, "detail": detail})

    add("project_root", root.exists(), "fail", str(root))
    for sub in ("networks", "scenarios", "jobs", "programs", "kernels"):
        add(f"data_{sub}", (root / "data" / sub).exists(), "warn", f"data/{sub}")
    add("venv", (root / ".venv").exists(), "warn", str(root / ".venv"))

    version = _numpy_version()
    add(
        "numpy_version",
        version >= MIN_NUMPY,
        "fail",
        f"numpy {np.__version__} (bitwise_count needs >= {MIN_NUMPY[0]}.{MIN_NUMPY[1]})",
    )

    calib_path = Path(calibration_path) if calibration_path else settings.calibration_path
    if not calib_path.is_absolute():
        calib_path = root / calib_path
    calib: Calibration | None = None
    try:
        calib = load_calibration(calib_path)
        add("calibration_file", True, "fail", f"{calib_path} (version {calib.version})")
    except ClusterSimError as exc:
        add("calibration_file", False, "fail", str(exc))

    if calib is not None:
        try:
            model = calibrate_delay(calib.abb)
            add(
                "delay_model",
                True,
                "fail",
                f"vth={model.vth:.4f} V, k_bb={model.k_bb:.4f}, probe reach={model.probe_reach:.4f}",
            )
        except ClusterSimError as exc:
            add("delay_model", False, "fail", str(exc))

        pc = calib.power
        anchor = power_model(pc).power_mw(pc.anchor_vdd, pc.anchor_freq_hz)
        add(
            "power_anchor",
            abs(anchor - pc.anchor_power_mw) < 1e-6 * pc.anchor_power_mw,
            "fail",
            f"{anchor:.3f} mW at {pc.anchor_vdd} V / {pc.anchor_freq_hz / 1e6:.0f} MHz",
        )
        add(
            "l1_budget",
            calib.tiler.l1_budget <= calib.cluster.tcdm_bytes,
            "warn",
            f"tiler budget {calib.tiler.l1_budget} B, TCDM {calib.cluster.tcdm_bytes} B",
        )
        add(
            "l1_budget_env",
            settings.l1_budget <= calib.cluster.tcdm_bytes,
            "warn",
            f"CLUSTERSIM_L1_BUDGET={settings.l1_budget}",
        )

    out_dir = settings.out_dir if settings.out_dir.is_absolute() else root / settings.out_dir
    out_ok = True
    out_severity = "fail"
    out_detail = str(out_dir)
    try:
        _probe_writable(out_dir)
    except OSError as primary_exc:  # pragma: no cover
        # Read-only checkouts still run with --out pointing elsewhere.
        fallback = Path(tempfile.gettempdir()) / "clustersim_out"
        try:
            _probe_writable(fallback)
            out_severity = "warn"
            out_detail = f"Primary path unavailable ({primary_exc}); fallback writable at {fallback}"
        except OSError as fallback_exc:
            out_ok = False
            out_detail = f"Primary error: {primary_exc}; fallback error: {fallback_exc}"
    add("out_dir", out_ok, out_severity, out_detail)

    failed = [c for c in checks if not c["ok"] and c["severity"] == "fail"]
    warnings = [c for c in checks if not c["ok"] and c["severity"] == "warn"]

    status = "ok"
    if failed:
        status = "fail"
    elif warnings:
        status = "warn"

    return {
        "status": status,
        "settings": {
            "calibration_path": str(calib_path),
            "out_dir": str(settings.out_dir),
            "seed": settings.seed,
            "log_level": settings.log_level,
            "overflow_trap": settings.overflow_trap,
            "deadlock_cycles": settings.deadlock_cycles,
            "l1_budget": settings.l1_budget,
        },
        "summary": {
            "passed": len([c for c in checks if c["ok"]]),
            "failed": len(failed),
            "warnings": len(warnings),
        },
        "checks": checks,
    }
