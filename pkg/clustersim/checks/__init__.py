from .calibration_audit import run_calibration_audit

__all__ = ["run_calibration_audit"]
