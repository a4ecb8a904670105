from __future__ import annotations

from typing import Any


class ClusterSimError(Exception):
    """Base class for every error raised by the simulator."""


class SimValidationError(ClusterSimError, ValueError):
    """Input rejected before simulation. The CLI maps it to exit code 2."""


class SimRuntimeError(ClusterSimError, RuntimeError):
    """Simulation started but could not complete. The CLI maps it to exit code 1."""


class RangeError(SimValidationError):
    pass


class ShapeError(SimValidationError):
    pass


class FormatError(SimValidationError):
    pass


class DecodeError(SimValidationError):
    pass


class GenerationError(SimValidationError):
    pass


class JobValidationError(SimValidationError):
    def __init__(self, problems: list[str]) -> None:
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


class QueueFullError(SimValidationError):
    pass


class DescriptorError(SimValidationError):
    pass


class InfeasibleTilingError(SimValidationError):
    def __init__(self, layer: str, binding_buffer: str, needed: int, budget: int) -> None:
        self.layer = layer
        self.binding_buffer = binding_buffer
        self.needed = needed
        self.budget = budget
        super().__init__(
            f"layer {layer!r}: minimal tile needs {needed} B > budget {budget} B "
            f"(binding buffer: {binding_buffer})"
        )


class AccumulatorOverflowError(SimRuntimeError):
    pass


class SimTimeoutError(SimRuntimeError):
    def __init__(self, message: str, trace: Any = None) -> None:
        self.trace = trace
        super().__init__(message)


class DeadlockError(SimRuntimeError):
    def __init__(self, message: str, diagnostic: dict[str, Any] | None = None) -> None:
        self.diagnostic = diagnostic or {}
        super().__init__(message)


class NoFeasibleVoltageError(SimRuntimeError):
    pass
