from __future__ import annotations

import csv
import json
from pathlib import Path

from clustersim.utils import flatten, json_text, write_json, write_rows


def test_json_text_keeps_key_order_and_escapes() -> None:
    text = json_text({"zeta": 1, "alpha": {"µ": "Ω"}})
    assert text.splitlines()[1] == '  "zeta": 1,'
    assert text.index("zeta") < text.index("alpha")
    assert "\\u00b5" in text and "\\u03a9" in text
    assert json.loads(text) == {"zeta": 1, "alpha": {"µ": "Ω"}}


def test_write_json_creates_parents(tmp_path: Path) -> None:
    path = write_json(tmp_path / "deep" / "out.json", {"ok": True})
    assert path.read_text(encoding="utf-8") == '{\n  "ok": true\n}\n'


def test_write_rows_flattens_and_drops_extra_columns(tmp_path: Path) -> None:
    rows = [flatten({"layer": "conv1", "cycles": {"compute": 10, "onchip": 4}, "note": "x"})]
    assert rows[0] == {"layer": "conv1", "cycles.compute": 10, "cycles.onchip": 4, "note": "x"}
    path = write_rows(tmp_path / "rows.csv", ["layer", "cycles.compute"], rows)
    with path.open(encoding="utf-8", newline="") as handle:
        assert list(csv.DictReader(handle)) == [{"layer": "conv1", "cycles.compute": "10"}]
