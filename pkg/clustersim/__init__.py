"""Cluster simulator package."""

__all__ = [
    "abb",
    "checks",
    "cluster",
    "config",
    "errors",
    "isa",
    "kernels",
    "memory",
    "preflight",
    "quant",
    "rbe",
    "schemas",
    "tiler",
    "utils",
]
