from __future__ import annotations

import numpy as np

from .errors import DescriptorError


class Memory:
    """Flat little-endian byte-addressed memory backed by a numpy array."""

    def __init__(self, size: int, name: str = "mem") -> None:
        if size <= 0 or size % 4:
            raise DescriptorError(f"{name}: size must be a positive multiple of 4, got {size}")
        self.name = name
        self.size = size
        self.data = np.zeros(size, dtype=np.uint8)
        self.words = self.data.view("<u4")

    def _check(self, addr: int, nbytes: int) -> None:
        if addr < 0 or addr + nbytes > self.size:
            raise DescriptorError(
                f"{self.name}: access [{addr:#x}, {addr + nbytes:#x}) outside {self.size} bytes"
            )

    def load(self, addr: int, size: int, signed: bool = False) -> int:
        self._check(addr, size)
        if size == 4 and addr % 4 == 0:
            value = int(self.words[addr >> 2])
        else:
            value = int.from_bytes(self.data[addr : addr + size].tobytes(), "little")
        if signed and value >> (8 * size - 1):
            value -= 1 << (8 * size)
        return value

    def store(self, addr: int, size: int, value: int) -> None:
        self._check(addr, size)
        value &= (1 << (8 * size)) - 1
        if size == 4 and addr % 4 == 0:
            self.words[addr >> 2] = value
        else:
            self.data[addr : addr + size] = np.frombuffer(value.to_bytes(size, "little"), dtype=np.uint8)

    def read_words(self, addr: int, count: int) -> np.ndarray:
        if addr % 4:
            raise DescriptorError(f"{self.name}: word read at unaligned address {addr:#x}")
        self._check(addr, 4 * count)
        return self.words[addr >> 2 : (addr >> 2) + count].copy()

    def write_words(self, addr: int, words: np.ndarray) -> None:
        if addr % 4:
            raise DescriptorError(f"{self.name}: word write at unaligned address {addr:#x}")
        flat = np.asarray(words, dtype=np.uint32).ravel()
        self._check(addr, 4 * flat.size)
        self.words[addr >> 2 : (addr >> 2) + flat.size] = flat

    def read_bytes(self, addr: int, count: int) -> np.ndarray:
        self._check(addr, count)
        return self.data[addr : addr + count].copy()

    def write_bytes(self, addr: int, payload: np.ndarray | bytes) -> None:
        if isinstance(payload, (bytes, bytearray)):
            buf = np.frombuffer(bytes(payload), dtype=np.uint8)
        else:
            buf = np.asarray(payload, dtype=np.uint8).ravel()
        self._check(addr, buf.size)
        self.data[addr : addr + buf.size] = buf

    def snapshot(self) -> np.ndarray:
        return self.data.copy()
