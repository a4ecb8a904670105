"""RBE job descriptors, validation and JSON (de)serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any

from ..errors import FormatError, JobValidationError
from ..quant import CONV1X1, CONV3X3, MODES, PADDINGS, RBE_MAX_BITS, RBE_MIN_BITS, NormParams, blocks32
from .uloop import UloopLevel, UloopProgram

SPATIAL_GROUP = 3
PLANES_PER_PASS = 4


@dataclass(frozen=True, slots=True)
class JobStrides:
    """Byte strides of the three packed regions, outermost dimension first."""

    act: tuple[int, int, int]
    wgt: tuple[int, int, int]
    out: tuple[int, int, int]

    def to_dict(self) -> dict[str, list[int]]:
        return {"act": list(self.act), "wgt": list(self.wgt), "out": list(self.out)}


@dataclass(slots=True)
class RbeJob:
    mode: str
    w_bits: int
    i_bits: int
    o_bits: int
    kin: int
    kout: int
    hout: int
    wout: int
    norm: NormParams
    padding: str = "same"
    act_addr: int = 0
    wgt_addr: int = 0
    out_addr: int = 0
    strides: JobStrides | None = None

    @property
    def taps(self) -> int:
        return 9 if self.mode == CONV3X3 else 1

    @property
    def halo(self) -> int:
        return 2 if self.mode == CONV3X3 and self.padding == "valid" else 0

    @property
    def hin(self) -> int:
        return self.hout + self.halo

    @property
    def win(self) -> int:
        return self.wout + self.halo

    @property
    def c32_in(self) -> int:
        return blocks32(self.kin)

    @property
    def c32_out(self) -> int:
        return blocks32(self.kout)

    @property
    def serial_w(self) -> int:
        """Weight bits processed one after another in time."""
        return self.w_bits if self.mode == CONV3X3 else 1

    @property
    def i_passes(self) -> int:
        return -(-self.i_bits // PLANES_PER_PASS)

    @property
    def act_words(self) -> int:
        return self.hin * self.win * self.c32_in * self.i_bits

    @property
    def wgt_words(self) -> int:
        return self.kout * self.c32_in * self.w_bits * self.taps

    @property
    def out_words(self) -> int:
        return self.hout * self.wout * self.c32_out * self.o_bits

    @property
    def macs(self) -> int:
        return self.hout * self.wout * self.kout * self.kin * self.taps

    @property
    def ops(self) -> int:
        return 2 * self.macs

    def expected_strides(self) -> JobStrides:
        act_c = self.i_bits * 4
        wgt_bit = self.taps * 4
        out_c = self.o_bits * 4
        return JobStrides(
            act=(self.win * self.c32_in * act_c, self.c32_in * act_c, act_c),
            wgt=(self.c32_in * self.w_bits * wgt_bit, self.w_bits * wgt_bit, wgt_bit),
            out=(self.wout * self.c32_out * out_c, self.c32_out * out_c, out_c),
        )

    def regions(self) -> dict[str, tuple[int, int]]:
        return {
            "act": (self.act_addr, self.act_addr + 4 * self.act_words),
            "wgt": (self.wgt_addr, self.wgt_addr + 4 * self.wgt_words),
            "out": (self.out_addr, self.out_addr + 4 * self.out_words),
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "mode": self.mode,
            "W": self.w_bits,
            "I": self.i_bits,
            "O": self.o_bits,
            "kin": self.kin,
            "kout": self.kout,
            "hout": self.hout,
            "wout": self.wout,
            "padding": self.padding,
            "norm": self.norm.to_dict(),
            "addresses": {"act": self.act_addr, "wgt": self.wgt_addr, "out": self.out_addr},
            "strides": (self.strides or self.expected_strides()).to_dict(),
        }


def validate(job: RbeJob) -> list[str]:
    problems: list[str] = []
    if job.mode not in MODES:
        problems.append(f"mode {job.mode!r} not in {MODES}")
    if job.padding not in PADDINGS:
        problems.append(f"padding {job.padding!r} not in {PADDINGS}")
    for name, bits in (("W", job.w_bits), ("I", job.i_bits), ("O", job.o_bits)):
        if not RBE_MIN_BITS <= bits <= RBE_MAX_BITS:
            problems.append(f"precision {name}={bits} outside [{RBE_MIN_BITS}, {RBE_MAX_BITS}]")
    for name in ("kin", "kout", "hout", "wout"):
        if getattr(job, name) <= 0:
            problems.append(f"extent {name}={getattr(job, name)} must be positive")
    if problems:
        return problems
    if job.norm.channels != job.kout:
        problems.append(f"norm params cover {job.norm.channels} channels, kout is {job.kout}")
    for name in ("act_addr", "wgt_addr", "out_addr"):
        addr = getattr(job, name)
        if addr < 0 or addr % 4:
            problems.append(f"{name}={addr} must be a non-negative word address")
    if job.strides is not None and job.strides != job.expected_strides():
        problems.append(
            f"strides {job.strides.to_dict()} do not match the packed layout "
            f"{job.expected_strides().to_dict()}"
        )
    regions = job.regions()
    out_lo, out_hi = regions["out"]
    for name in ("act", "wgt"):
        lo, hi = regions[name]
        if lo < out_hi and out_lo < hi:
            problems.append(f"output region overlaps the {name} region")
    return problems


def check(job: RbeJob) -> RbeJob:
    problems = validate(job)
    if problems:
        raise JobValidationError(problems)
    return job


def build_uloop(job: RbeJob) -> UloopProgram:
    """Tile loop nest: kout tiles, 3x3 output groups, Kin chunks, input-plane passes, weight bits."""
    s = job.expected_strides()
    levels = [
        UloopLevel("kout_tile", job.c32_out, wgt_stride=32 * s.wgt[0], out_stride=s.out[2]),
        UloopLevel("group_y", -(-job.hout // SPATIAL_GROUP), act_stride=SPATIAL_GROUP * s.act[0], out_stride=SPATIAL_GROUP * s.out[0]),
        UloopLevel("group_x", -(-job.wout // SPATIAL_GROUP), act_stride=SPATIAL_GROUP * s.act[1], out_stride=SPATIAL_GROUP * s.out[1]),
        UloopLevel("kin_chunk", job.c32_in, act_stride=s.act[2], wgt_stride=s.wgt[1]),
        UloopLevel("i_pass", job.i_passes, act_stride=PLANES_PER_PASS * 4),
        UloopLevel("w_bit", job.serial_w, wgt_stride=s.wgt[2]),
    ]
    return UloopProgram(levels, job.act_addr, job.wgt_addr, job.out_addr)


def _int(payload: dict[str, Any], key: str, default: int | None = None) -> int:
    if key not in payload:
        if default is None:
            raise FormatError(f"job field {key!r} is required")
        return default
    value = payload[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise FormatError(f"job field {key!r} must be an integer")
    return value


def job_from_dict(payload: dict[str, Any]) -> RbeJob:
    if not isinstance(payload, dict):
        raise FormatError("job descriptor must be a JSON object")
    mode = payload.get("mode", CONV3X3)
    if mode in ("3x3", "conv3x3"):
        mode = CONV3X3
    elif mode in ("1x1", "conv1x1"):
        mode = CONV1X1
    kout = _int(payload, "kout")
    norm_payload = payload.get("norm")
    if norm_payload is None:
        norm = NormParams.identity(kout, shift=int(payload.get("shift", 0)))
    else:
        try:
            norm = NormParams.from_dict(norm_payload)
        except (KeyError, TypeError) as exc:
            raise FormatError(f"bad norm block: {exc}") from exc
    addresses = payload.get("addresses", {})
    strides = payload.get("strides")
    job = RbeJob(
        mode=mode,
        w_bits=_int(payload, "W"),
        i_bits=_int(payload, "I"),
        o_bits=_int(payload, "O"),
        kin=_int(payload, "kin"),
        kout=kout,
        hout=_int(payload, "hout"),
        wout=_int(payload, "wout"),
        norm=norm,
        padding=payload.get("padding", "same"),
        act_addr=_int(addresses, "act", 0),
        wgt_addr=_int(addresses, "wgt", 0),
        out_addr=_int(addresses, "out", 0),
        strides=JobStrides(tuple(strides["act"]), tuple(strides["wgt"]), tuple(strides["out"])) if strides else None,
    )
    if "addresses" not in payload:
        place(job)
    return job


def place(job: RbeJob, base: int = 0) -> RbeJob:
    """Lay the three regions out back to back from ``base``."""
    job.act_addr = base
    job.wgt_addr = job.act_addr + 4 * job.act_words
    job.out_addr = job.wgt_addr + 4 * job.wgt_words
    return job


def load_job(path: str | Path) -> RbeJob:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"job file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"job file is not valid JSON: {path}: {exc}") from exc
    return job_from_dict(payload)
