from __future__ import annotations

from .reports import flatten, json_text, write_json, write_rows

__all__ = ["flatten", "json_text", "write_json", "write_rows"]
