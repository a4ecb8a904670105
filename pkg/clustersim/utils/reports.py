from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable, Sequence


def json_text(payload: Any) -> str:
    return json.dumps(payload, indent=2, ensure_ascii=True, sort_keys=False)


def write_json(path: str | Path, payload: Any) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_text(json_text(payload) + "\n", encoding="utf-8")
    return target


def write_rows(path: str | Path, fields: Sequence[str], rows: Iterable[dict[str, Any]]) -> Path:
    """CSV with a header row; columns outside ``fields`` are dropped."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with target.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return target


def flatten(row: dict[str, Any], prefix: str = "") -> dict[str, Any]:
    """Nested dicts become ``outer.inner`` columns."""
    flat: dict[str, Any] = {}
    for key, value in row.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(flatten(value, f"{name}."))
        else:
            flat[name] = value
    return flat
