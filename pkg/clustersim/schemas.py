from __future__ import annotations

from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any


@dataclass(slots=True)
class OperatingPoint:
    vdd: float = 0.8
    freq_hz: float = 420e6
    vbb: float = 0.0

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(slots=True)
class RunConfig:
    subcommand: str
    scenario: Path | None
    out_dir: Path
    seed: int
    operating_point: OperatingPoint = field(default_factory=OperatingPoint)

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["scenario"] = str(self.scenario) if self.scenario else None
        payload["out_dir"] = str(self.out_dir)
        return payload
