"""Nested tile-loop descriptors and their address generation."""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import product
from typing import Iterator

LEVELS = ("kout_tile", "group_y", "group_x", "kin_chunk", "i_pass", "w_bit")


@dataclass(frozen=True, slots=True)
class UloopLevel:
    name: str
    extent: int
    act_stride: int = 0
    wgt_stride: int = 0
    out_stride: int = 0


@dataclass(frozen=True, slots=True)
class UloopStep:
    index: tuple[int, ...]
    act_addr: int
    wgt_addr: int
    out_addr: int


@dataclass(slots=True)
class UloopProgram:
    """Outermost level first; addresses are base + sum(index * stride)."""

    levels: list[UloopLevel]
    act_base: int = 0
    wgt_base: int = 0
    out_base: int = 0
    _names: tuple[str, ...] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        self._names = tuple(level.name for level in self.levels)

    def level(self, name: str) -> UloopLevel:
        return self.levels[self._names.index(name)]

    def iterations(self, upto: str | None = None) -> int:
        """Iteration count of the nest, or of the levels down to and including ``upto``."""
        total = 1
        for level in self.levels:
            total *= level.extent
            if level.name == upto:
                break
        return total

    def addresses(self, index: tuple[int, ...]) -> UloopStep:
        act, wgt, out = self.act_base, self.wgt_base, self.out_base
        for i, level in zip(index, self.levels):
            act += i * level.act_stride
            wgt += i * level.wgt_stride
            out += i * level.out_stride
        return UloopStep(index, act, wgt, out)

    def iterate(self, upto: str | None = None) -> Iterator[UloopStep]:
        depth = len(self.levels) if upto is None else self._names.index(upto) + 1
        for index in product(*(range(level.extent) for level in self.levels[:depth])):
            yield self.addresses(index)
