"""Integer quantization arithmetic, RBE bit-plane layouts and the golden convolution oracle.

Activations are stored as (H, W, ceil(K/32), I, 32): one 32-bit word per pixel,
channel block and bit-plane, channel ``k`` in bit-lane ``k % 32``. Weights are stored
as (Kout, ceil(Kin/32), W, 9, 32) for 3x3 filters, taps in row-major (fy, fx) order,
and (Kout, ceil(Kin/32), W, 32) for 1x1 filters. Channel tails are zero-padded.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any

import numpy as np

from .errors import AccumulatorOverflowError, FormatError, RangeError, ShapeError

logger = logging.getLogger(__name__)

BitWidth = int

CONV3X3 = "conv3x3"
CONV1X1 = "conv1x1"
MODES = (CONV3X3, CONV1X1)
PADDINGS = ("same", "valid")

LANES = 32
RBE_MIN_BITS = 2
RBE_MAX_BITS = 8
ISA_WIDTHS = (2, 4, 8, 16, 32)
INT32_MIN = -(1 << 31)
INT32_MAX = (1 << 31) - 1

_LANE_SHIFTS = np.arange(LANES, dtype=np.uint64)


def blocks32(channels: int) -> int:
    return (channels + LANES - 1) // LANES


def check_rbe_bits(bits: int, name: str = "bits") -> None:
    if not RBE_MIN_BITS <= bits <= RBE_MAX_BITS:
        raise RangeError(f"{name}={bits} outside [{RBE_MIN_BITS}, {RBE_MAX_BITS}]")


def _value_range(bits: int, signed: bool) -> tuple[int, int]:
    if signed:
        return -(1 << (bits - 1)), (1 << (bits - 1)) - 1
    return 0, (1 << bits) - 1


@dataclass(slots=True)
class QTensor:
    shape: tuple[int, ...]
    data: np.ndarray
    bitwidth: BitWidth
    signed: bool = False

    def __post_init__(self) -> None:
        self.shape = tuple(int(d) for d in self.shape)
        if not 1 <= self.bitwidth <= 32:
            raise RangeError(f"bitwidth {self.bitwidth} outside [1, 32]")
        flat = np.asarray(self.data, dtype=np.int64).ravel()
        if flat.size != int(np.prod(self.shape, dtype=np.int64)):
            raise ShapeError(f"data length {flat.size} does not match shape {self.shape}")
        lo, hi = _value_range(self.bitwidth, self.signed)
        if flat.size and (flat.min() < lo or flat.max() > hi):
            raise RangeError(
                f"values outside the {'signed' if self.signed else 'unsigned'} "
                f"{self.bitwidth}-bit range [{lo}, {hi}]"
            )
        self.data = flat.astype(np.int32).reshape(self.shape)

    @classmethod
    def from_array(cls, values: Any, bitwidth: int, signed: bool = False) -> QTensor:
        arr = np.asarray(values)
        return cls(shape=arr.shape, data=arr, bitwidth=bitwidth, signed=signed)

    def to_dict(self) -> dict[str, Any]:
        return {"shape": list(self.shape), "bitwidth": self.bitwidth, "signed": self.signed}


@dataclass(slots=True)
class NormParams:
    scale: np.ndarray
    bias: np.ndarray
    shift: int
    relu: bool = True

    def __post_init__(self) -> None:
        self.scale = np.asarray(self.scale, dtype=np.int64).ravel()
        self.bias = np.asarray(self.bias, dtype=np.int64).ravel()
        if self.scale.shape != self.bias.shape:
            raise ShapeError("scale and bias must have the same length")
        for name, arr in (("scale", self.scale), ("bias", self.bias)):
            if arr.size and (arr.min() < INT32_MIN or arr.max() > INT32_MAX):
                raise RangeError(f"{name} does not fit in 32-bit signed integers")
        if not 0 <= self.shift <= 31:
            raise RangeError(f"shift {self.shift} outside [0, 31]")

    @property
    def channels(self) -> int:
        return int(self.scale.size)

    @classmethod
    def identity(cls, kout: int, shift: int = 0, relu: bool = True) -> NormParams:
        return cls(np.ones(kout, dtype=np.int64), np.zeros(kout, dtype=np.int64), shift, relu)

    def to_dict(self) -> dict[str, Any]:
        return {
            "scale": [int(v) for v in self.scale],
            "bias": [int(v) for v in self.bias],
            "shift": self.shift,
            "relu": self.relu,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> NormParams:
        return cls(
            scale=np.asarray(payload["scale"], dtype=np.int64),
            bias=np.asarray(payload["bias"], dtype=np.int64),
            shift=int(payload.get("shift", 0)),
            relu=bool(payload.get("relu", True)),
        )


@dataclass(slots=True)
class PackedActivations:
    buffer: np.ndarray
    dims: tuple[int, int, int]
    bitwidth: BitWidth

    @property
    def expected_words(self) -> int:
        h, w, k = self.dims
        return h * w * blocks32(k) * self.bitwidth


@dataclass(slots=True)
class PackedWeights:
    buffer: np.ndarray
    mode: str
    dims: tuple[int, int, int, int]
    bitwidth: BitWidth

    @property
    def expected_words(self) -> int:
        return weight_words(self.mode, self.dims[0], self.dims[1], self.bitwidth)


def weight_words(mode: str, kout: int, kin: int, bits: int) -> int:
    taps = 9 if mode == CONV3X3 else 1
    return kout * blocks32(kin) * bits * taps


def activation_words(h: int, w: int, k: int, bits: int) -> int:
    return h * w * blocks32(k) * bits


def bit_decompose(value: int, bits: BitWidth) -> list[int]:
    if bits < 1:
        raise RangeError(f"bits must be positive, got {bits}")
    if not 0 <= value < (1 << bits):
        raise RangeError(f"value {value} not representable in {bits} unsigned bits")
    return [(value >> i) & 1 for i in range(bits)]


def _pack_lanes(bits: np.ndarray) -> np.ndarray:
    """Collapse a trailing 32-lane axis of 0/1 values into uint32 words."""
    return (bits.astype(np.uint64) << _LANE_SHIFTS).sum(axis=-1, dtype=np.uint64).astype(np.uint32)


def _unpack_lanes(words: np.ndarray) -> np.ndarray:
    return ((words.astype(np.uint64)[..., None] >> _LANE_SHIFTS) & 1).astype(np.int64)


def pack_bitplanes(values: np.ndarray, bits: int) -> np.ndarray:
    """(..., 32) unsigned lane values -> (..., bits) uint32 plane words."""
    planes = np.stack([(values >> i) & 1 for i in range(bits)], axis=-2)
    return _pack_lanes(planes)


def unpack_bitplanes(words: np.ndarray) -> np.ndarray:
    """(..., bits) plane words -> (..., 32) lane values."""
    bits = _unpack_lanes(words)
    weights = (1 << np.arange(words.shape[-1], dtype=np.int64))[:, None]
    return (bits * weights).sum(axis=-2)


def _require_unsigned(t: QTensor, bits: int, what: str) -> np.ndarray:
    if t.signed:
        raise RangeError(f"{what} must be unsigned for the RBE layouts")
    arr = t.data.astype(np.int64)
    if arr.size and (arr.min() < 0 or arr.max() > (1 << bits) - 1):
        raise RangeError(f"{what} element exceeds {bits}-bit unsigned range")
    return arr


def _pad_channels(arr: np.ndarray, axis: int) -> np.ndarray:
    k = arr.shape[axis]
    pad = blocks32(k) * LANES - k
    if pad == 0:
        return arr
    widths = [(0, 0)] * arr.ndim
    widths[axis] = (0, pad)
    return np.pad(arr, widths)


def pack_activations(t: QTensor, bits: BitWidth) -> PackedActivations:
    if len(t.shape) != 3:
        raise ShapeError(f"activations must be H x W x K, got {t.shape}")
    arr = _require_unsigned(t, bits, "activation")
    h, w, k = t.shape
    c32 = blocks32(k)
    lanes = _pad_channels(arr, 2).reshape(h, w, c32, LANES)
    return PackedActivations(buffer=pack_bitplanes(lanes, bits).ravel(), dims=(h, w, k), bitwidth=bits)


def pack_outputs(t: QTensor, bits: BitWidth) -> PackedActivations:
    """RBE outputs share the activation layout so a layer feeds the next one unchanged."""
    return pack_activations(t, bits)


def unpack_activations(p: PackedActivations) -> QTensor:
    h, w, k = p.dims
    buf = np.asarray(p.buffer, dtype=np.uint32).ravel()
    if buf.size != p.expected_words:
        raise FormatError(f"activation buffer has {buf.size} words, expected {p.expected_words}")
    c32 = blocks32(k)
    values = unpack_bitplanes(buf.reshape(h, w, c32, p.bitwidth)).reshape(h, w, c32 * LANES)[:, :, :k]
    return QTensor((h, w, k), values, p.bitwidth, signed=False)


def pack_weights(t: QTensor, bits: BitWidth, mode: str) -> PackedWeights:
    if mode not in MODES:
        raise ShapeError(f"unknown mode {mode!r}")
    if len(t.shape) != 4:
        raise ShapeError(f"weights must be Kout x Kin x Fh x Fw, got {t.shape}")
    kout, kin, fh, fw = t.shape
    want = 3 if mode == CONV3X3 else 1
    if (fh, fw) != (want, want):
        raise ShapeError(f"{mode} needs {want}x{want} filters, got {fh}x{fw}")
    arr = _require_unsigned(t, bits, "weight")
    c32 = blocks32(kin)
    taps = fh * fw
    # (Kout, Kin, taps) -> (Kout, c32, taps, 32)
    lanes = _pad_channels(arr.reshape(kout, kin, taps), 1).reshape(kout, c32, LANES, taps)
    lanes = lanes.transpose(0, 1, 3, 2)
    planes = np.stack([(lanes >> i) & 1 for i in range(bits)], axis=2)
    words = _pack_lanes(planes)
    if mode == CONV1X1:
        words = words[..., 0]
    return PackedWeights(buffer=words.ravel(), mode=mode, dims=(kout, kin, fh, fw), bitwidth=bits)


def unpack_weights(p: PackedWeights) -> QTensor:
    kout, kin, fh, fw = p.dims
    buf = np.asarray(p.buffer, dtype=np.uint32).ravel()
    if buf.size != p.expected_words:
        raise FormatError(f"weight buffer has {buf.size} words, expected {p.expected_words}")
    c32 = blocks32(kin)
    taps = fh * fw
    bits = _unpack_lanes(buf.reshape(kout, c32, p.bitwidth, taps))
    weights = (1 << np.arange(p.bitwidth, dtype=np.int64))[:, None, None]
    values = (bits * weights).sum(axis=2)
    values = values.transpose(0, 1, 3, 2).reshape(kout, c32 * LANES, taps)[:, :kin, :]
    return QTensor((kout, kin, fh, fw), values.reshape(kout, kin, fh, fw), p.bitwidth)


def output_size(h: int, w: int, mode: str, padding: str) -> tuple[int, int]:
    if mode == CONV3X3 and padding == "valid":
        return h - 2, w - 2
    return h, w


def _accumulate(acts: np.ndarray, wgts: np.ndarray, mode: str, padding: str) -> np.ndarray:
    h, w, _ = acts.shape
    if mode == CONV1X1:
        return np.einsum("hwc,oc->hwo", acts, wgts[:, :, 0, 0])
    src = np.pad(acts, ((1, 1), (1, 1), (0, 0))) if padding == "same" else acts
    hout, wout = output_size(h, w, mode, padding)
    acc = np.zeros((hout, wout, wgts.shape[0]), dtype=np.int64)
    for fy in range(3):
        for fx in range(3):
            window = src[fy : fy + hout, fx : fx + wout, :]
            acc += np.einsum("hwc,oc->hwo", window, wgts[:, :, fy, fx])
    return acc


def check_accumulators(acc: np.ndarray, overflow: str = "trap") -> np.ndarray:
    """Fit 64-bit sums into the 32-bit accumulator width."""
    if acc.size == 0 or (acc.min() >= INT32_MIN and acc.max() <= INT32_MAX):
        return acc
    if overflow == "trap":
        raise AccumulatorOverflowError(
            f"accumulator range [{int(acc.min())}, {int(acc.max())}] exceeds 32-bit signed"
        )
    logger.warning("accumulator overflow wrapped to 32 bits")
    return ((acc - INT32_MIN) % (1 << 32)) + INT32_MIN


def normalize_quantize(acc: np.ndarray, norm: NormParams, out_bits: int) -> np.ndarray:
    """Per-channel scale, bias, arithmetic right shift, optional ReLU, clamp to [0, 2^O - 1]."""
    y = (norm.scale * acc.astype(np.int64) + norm.bias) >> norm.shift
    if norm.relu:
        y = np.maximum(y, 0)
    return np.clip(y, 0, (1 << out_bits) - 1)


def _check_conv_operands(acts: QTensor, wgts: QTensor, norm: NormParams, mode: str, padding: str) -> None:
    if mode not in MODES:
        raise ShapeError(f"unknown mode {mode!r}")
    if padding not in PADDINGS:
        raise ShapeError(f"unknown padding {padding!r}")
    if acts.signed or wgts.signed:
        raise RangeError("convolution operands must be unsigned")
    if len(acts.shape) != 3 or len(wgts.shape) != 4:
        raise ShapeError("expected H x W x Kin activations and Kout x Kin x Fh x Fw weights")
    want = 3 if mode == CONV3X3 else 1
    if wgts.shape[2:] != (want, want):
        raise ShapeError(f"{mode} needs {want}x{want} filters, got {wgts.shape[2:]}")
    if acts.shape[2] != wgts.shape[1]:
        raise ShapeError(f"Kin mismatch: activations {acts.shape[2]}, weights {wgts.shape[1]}")
    if norm.channels != wgts.shape[0]:
        raise ShapeError(f"norm params cover {norm.channels} channels, Kout is {wgts.shape[0]}")
    hout, wout = output_size(acts.shape[0], acts.shape[1], mode, padding)
    if hout <= 0 or wout <= 0:
        raise ShapeError("input too small for a valid 3x3 convolution")


def reference_conv(
    acts: QTensor,
    wgts: QTensor,
    norm: NormParams,
    mode: str,
    out_bits: BitWidth,
    padding: str = "same",
    overflow: str = "trap",
) -> QTensor:
    _check_conv_operands(acts, wgts, norm, mode, padding)
    acc = _accumulate(acts.data.astype(np.int64), wgts.data.astype(np.int64), mode, padding)
    acc = check_accumulators(acc, overflow)
    out = normalize_quantize(acc, norm, out_bits)
    return QTensor(out.shape, out, out_bits, signed=False)


def naive_conv(
    acts: QTensor,
    wgts: QTensor,
    norm: NormParams,
    mode: str,
    out_bits: BitWidth,
    padding: str = "same",
) -> QTensor:
    """Plain nested-loop convolution, kept independent of numpy broadcasting."""
    _check_conv_operands(acts, wgts, norm, mode, padding)
    h, w, kin = acts.shape
    kout = wgts.shape[0]
    a = acts.data.tolist()
    f = wgts.data.tolist()
    hout, wout = output_size(h, w, mode, padding)
    off = 1 if (mode == CONV3X3 and padding == "same") else 0
    taps = 3 if mode == CONV3X3 else 1
    scale = [int(v) for v in norm.scale]
    bias = [int(v) for v in norm.bias]
    top = (1 << out_bits) - 1
    out = [[[0] * kout for _ in range(wout)] for _ in range(hout)]
    for y in range(hout):
        for x in range(wout):
            for ko in range(kout):
                acc = 0
                for fy in range(taps):
                    for fx in range(taps):
                        iy, ix = y + fy - off, x + fx - off
                        if not (0 <= iy < h and 0 <= ix < w):
                            continue
                        row = a[iy][ix]
                        for ki in range(kin):
                            acc += row[ki] * f[ko][ki][fy][fx]
                if not INT32_MIN <= acc <= INT32_MAX:
                    raise AccumulatorOverflowError(f"accumulator {acc} exceeds 32-bit signed")
                v = (scale[ko] * acc + bias[ko]) >> norm.shift
                if norm.relu:
                    v = max(v, 0)
                out[y][x][ko] = min(max(v, 0), top)
    return QTensor((hout, wout, kout), np.asarray(out, dtype=np.int64).reshape(hout, wout, kout), out_bits)


def random_qtensor(rng: np.random.Generator, shape: tuple[int, ...], bits: int, signed: bool = False) -> QTensor:
    lo, hi = _value_range(bits, signed)
    return QTensor(shape, rng.integers(lo, hi + 1, size=shape, dtype=np.int64), bits, signed)


def save_qtensor(t: QTensor, path: str | Path) -> Path:
    header_path = Path(path)
    payload_path = header_path.with_suffix(".bin")
    if payload_path == header_path:
        payload_path = header_path.with_name(header_path.stem + ".payload.bin")
    header_path.parent.mkdir(parents=True, exist_ok=True)
    header = t.to_dict()
    header["payload"] = payload_path.name
    header_path.write_text(json.dumps(header, indent=2), encoding="utf-8")
    payload_path.write_bytes(t.data.astype("<i4").tobytes())
    return header_path


def load_qtensor(path: str | Path) -> QTensor:
    header_path = Path(path)
    try:
        header = json.loads(header_path.read_text(encoding="utf-8"))
        shape = tuple(int(d) for d in header["shape"])
        payload = header_path.parent / header.get("payload", header_path.with_suffix(".bin").name)
        raw = np.frombuffer(payload.read_bytes(), dtype="<i4")
    except (KeyError, ValueError, OSError) as exc:
        raise FormatError(f"cannot read tensor {header_path}: {exc}") from exc
    if raw.size != int(np.prod(shape, dtype=np.int64)):
        raise FormatError(f"payload of {header_path} holds {raw.size} values, shape needs {shape}")
    return QTensor(shape, raw.astype(np.int64), int(header["bitwidth"]), bool(header.get("signed", False)))


def save_words(words: np.ndarray, path: str | Path) -> Path:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(np.asarray(words, dtype="<u4").tobytes())
    return target


def load_words(path: str | Path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) % 4:
        raise FormatError(f"{path}: length {len(raw)} is not a whole number of words")
    return np.frombuffer(raw, dtype="<u4").astype(np.uint32)
