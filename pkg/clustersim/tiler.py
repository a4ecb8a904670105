"""Layer tiling under the L1 budget and network scheduling.

Each layer is split into tiles that fit the TCDM double-buffered. Its latency is the
tallest of three overlapped streams (off-chip L3 traffic, on-chip DMA traffic, compute)
plus the first load and the last store, which cannot overlap anything.

``tile_layer`` is the volume-greedy solver. ``plan_layer``, used for scheduling, searches
a fixed grid of tile shapes for the lowest latency; the grid does not depend on the
layer's precisions, so narrowing any operand never makes a layer slower.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, astuple, dataclass, field, replace
from functools import lru_cache
from pathlib import Path
from typing import Any, Iterable

import numpy as np

from .abb.power import power_model
from .cluster import DmaDescriptor, dma_cycles
from .config import Calibration, ClusterCalibration, RbeCalibration, TilerCalibration
from .errors import FormatError, InfeasibleTilingError, RangeError, ShapeError
from .kernels import BASELINE_TILE, MACLOAD_TILE, PRECISIONS, KernelSpec, gen_vecadd, measure, random_operands, run_matmul
from .memory import Memory
from .quant import CONV1X1, CONV3X3, LANES, NormParams, QTensor, blocks32
from .rbe import RbeJob, execute_functional, job_total_cycles, place, stage_job
from .schemas import OperatingPoint
from .utils.reports import write_rows

logger = logging.getLogger(__name__)

DWCONV3X3 = "dwconv3x3"
LINEAR = "linear"
ADD = "add"
LAYER_KINDS = (CONV3X3, CONV1X1, DWCONV3X3, LINEAR, ADD)
RBE_KINDS = (CONV3X3, CONV1X1)
CHANNELWISE = (DWCONV3X3, ADD)
RESIDENCY = ("l2", "l3")
BOUNDS = ("offchip", "onchip", "compute")
SOFTWARE_CHANNEL_STEP = 8

SCHEDULE_FIELDS = (
    "layer",
    "kind",
    "engine",
    "tiles",
    "tile_h",
    "tile_w",
    "tile_kin",
    "tile_kout",
    "footprint_bytes",
    "offchip_cycles",
    "onchip_cycles",
    "compute_cycles",
    "prologue_cycles",
    "epilogue_cycles",
    "latency_cycles",
    "boundedness",
    "energy_uj",
)


def _ceil(a: int, b: int) -> int:
    return -(-a // b)


@dataclass(slots=True)
class LayerDescriptor:
    """One network layer. ``h`` and ``w`` are output extents."""

    name: str
    kind: str
    h: int
    w: int
    kin: int
    kout: int
    w_bits: int = 8
    i_bits: int = 8
    o_bits: int = 8
    stride: int = 1
    input_in: str = "l2"
    weights_in: str = "l3"
    output_in: str = "l2"

    def __post_init__(self) -> None:
        problems = validate_layer(self)
        if problems:
            raise RangeError(f"layer {self.name!r}: " + "; ".join(problems))

    @property
    def engine(self) -> str:
        return "rbe" if self.kind in RBE_KINDS else "software"

    @property
    def side(self) -> int:
        return 3 if self.kind in (CONV3X3, DWCONV3X3) else 1

    @property
    def macs(self) -> int:
        if self.kind == ADD:
            return 0
        if self.kind == DWCONV3X3:
            return self.h * self.w * self.kout * 9
        return self.h * self.w * self.kout * self.kin * self.side * self.side

    def input_extent(self, h: int, w: int) -> tuple[int, int]:
        halo = self.side - 1
        return (h - 1) * self.stride + 1 + halo, (w - 1) * self.stride + 1 + halo

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["engine"] = self.engine
        return payload


def validate_layer(layer: LayerDescriptor) -> list[str]:
    problems: list[str] = []
    if layer.kind not in LAYER_KINDS:
        problems.append(f"kind {layer.kind!r} not in {LAYER_KINDS}")
    for name in ("h", "w", "kin", "kout", "stride"):
        if getattr(layer, name) <= 0:
            problems.append(f"extent {name}={getattr(layer, name)} must be positive")
    lo = 2 if layer.kind in RBE_KINDS else 1
    for name in ("w_bits", "i_bits", "o_bits"):
        bits = getattr(layer, name)
        if not lo <= bits <= 8:
            problems.append(f"precision {name}={bits} outside [{lo}, 8]")
    for name in ("input_in", "weights_in", "output_in"):
        if getattr(layer, name) not in RESIDENCY:
            problems.append(f"{name}={getattr(layer, name)!r} not in {RESIDENCY}")
    if layer.kind in CHANNELWISE and layer.kin != layer.kout:
        problems.append(f"{layer.kind} needs kin == kout, got {layer.kin} and {layer.kout}")
    if layer.kind == LINEAR and (layer.h, layer.w) != (1, 1):
        problems.append("linear layers have a 1x1 output")
    return problems


@dataclass(slots=True)
class TileSolution:
    h: int
    w: int
    kin: int
    kout: int
    in_bytes: int
    out_bytes: int
    wgt_bytes: int
    double_buffered: bool
    grid: tuple[int, int, int, int]

    @property
    def tiles(self) -> int:
        return math.prod(self.grid)

    @property
    def buffer_bytes(self) -> int:
        return self.in_bytes + self.out_bytes + self.wgt_bytes

    @property
    def footprint(self) -> int:
        return (2 if self.double_buffered else 1) * self.buffer_bytes

    def to_dict(self) -> dict[str, Any]:
        payload = asdict(self)
        payload["grid"] = list(self.grid)
        payload["tiles"] = self.tiles
        payload["footprint"] = self.footprint
        return payload


def _packed(n: int, bits: int) -> int:
    return _ceil(n * bits, 8)


def tile_buffers(layer: LayerDescriptor, h: int, w: int, kin: int, kout: int) -> tuple[int, int, int]:
    """L1 bytes of the (input, output, weight) buffers of one tile.

    A tile covering part of Kin keeps 32-bit partial sums in its output buffer.
    """
    in_h, in_w = layer.input_extent(h, w)
    split = kin < layer.kin and layer.kind not in CHANNELWISE
    if layer.engine == "rbe":
        c_in = blocks32(kin)
        in_bytes = in_h * in_w * c_in * layer.i_bits * 4
        wgt_bytes = kout * c_in * layer.w_bits * layer.side * layer.side * 4
        out_bits = 32 if split else layer.o_bits
        return in_bytes, h * w * blocks32(kout) * out_bits * 4, wgt_bytes
    if layer.kind == ADD:
        return 2 * _packed(h * w * kout, layer.i_bits), _packed(h * w * kout, layer.o_bits), 0
    if layer.kind == DWCONV3X3:
        wgt = _packed(kout * 9, layer.w_bits)
        return _packed(in_h * in_w * kout, layer.i_bits), _packed(h * w * kout, layer.o_bits), wgt
    out_bytes = h * w * kout * 4 if split else _packed(h * w * kout, layer.o_bits)
    return _packed(in_h * in_w * kin, layer.i_bits), out_bytes, _packed(kout * kin, layer.w_bits)


def _channel_step(layer: LayerDescriptor) -> int:
    return LANES if layer.engine == "rbe" else SOFTWARE_CHANNEL_STEP


def _channel_options(total: int, step: int) -> list[int]:
    """``total`` first, then multiples of ``step`` below it, descending."""
    return [total] + [c for c in range(_ceil(total, step) * step - step, 0, -step) if c < total]


def _candidates(layer: LayerDescriptor, split_kin: bool) -> list[tuple[int, int]]:
    step = _channel_step(layer)
    kouts = _channel_options(layer.kout, step)
    if layer.kind in CHANNELWISE:
        return [] if split_kin else [(k, k) for k in kouts]
    kins = _channel_options(layer.kin, step)[1:] if split_kin else [layer.kin]
    return [(kin, kout) for kin in kins for kout in kouts]


def _solution(layer: LayerDescriptor, h: int, w: int, kin: int, kout: int, double: bool) -> TileSolution:
    in_b, out_b, wgt_b = tile_buffers(layer, h, w, kin, kout)
    kin_tiles = 1 if layer.kind in CHANNELWISE else _ceil(layer.kin, kin)
    grid = (_ceil(layer.h, h), _ceil(layer.w, w), _ceil(layer.kout, kout), kin_tiles)
    return TileSolution(h, w, kin, kout, in_b, out_b, wgt_b, double, grid)


def _widest(layer: LayerDescriptor, h: int, kin: int, kout: int, budget: int) -> int:
    """Largest tile width fitting ``budget`` double-buffered, 0 if none."""
    lo, hi = 0, layer.w
    while lo < hi:
        mid = (lo + hi + 1) // 2
        if 2 * sum(tile_buffers(layer, h, mid, kin, kout)) <= budget:
            lo = mid
        else:
            hi = mid - 1
    return lo


def _search(layer: LayerDescriptor, budget: int, candidates: list[tuple[int, int]]) -> TileSolution | None:
    best: tuple[tuple[int, ...], TileSolution] | None = None
    for kin, kout in candidates:
        for h in range(layer.h, 0, -1):
            if best is not None and h * layer.w * kin * kout < best[0][0]:
                break
            w = _widest(layer, h, kin, kout, budget)
            if w == 0:
                continue
            key = (h * w * kin * kout, kout, h, w)
            if best is None or key > best[0]:
                best = (key, _solution(layer, h, w, kin, kout, True))
    return best[1] if best else None


def tile_layer(layer: LayerDescriptor, budget: int | None = None) -> TileSolution:
    """Largest tile that fits ``budget`` double-buffered.

    Full-Kin tiles are preferred; Kin is split only when no full-Kin tile fits. Ties go to
    the larger kout, then h, then w.
    """
    budget = budget or Calibration().tiler.l1_budget
    if sum(tile_buffers(layer, layer.h, layer.w, layer.kin, layer.kout)) <= budget:
        return _solution(layer, layer.h, layer.w, layer.kin, layer.kout, False)
    found = _search(layer, budget, _candidates(layer, split_kin=False))
    if found is None:
        found = _search(layer, budget, _candidates(layer, split_kin=True))
    if found is None:
        raise _infeasible(layer, budget)
    if found.grid[3] > 1:
        logger.warning("layer %s: Kin split into %d tiles of %d channels", layer.name, found.grid[3], found.kin)
    logger.debug("layer %s tiled %s", layer.name, found.to_dict())
    return found


def _infeasible(layer: LayerDescriptor, budget: int) -> InfeasibleTilingError:
    """Error for a layer whose smallest tile overflows ``budget``, naming the largest buffer."""
    step = _channel_step(layer)
    kout = min(layer.kout, step)
    kin = kout if layer.kind in CHANNELWISE else min(layer.kin, step)
    sizes = dict(zip(("input", "output", "weights"), tile_buffers(layer, 1, 1, kin, kout)))
    binding = max(sizes, key=lambda k: sizes[k])
    return InfeasibleTilingError(layer.name, binding, 2 * sum(sizes.values()), budget)


# Cost model


@lru_cache(maxsize=32)
def _measured_cycles_per_op(kind: str, precision: int) -> float:
    """Single-core cycles per MAC (per element for ``add``) from the generated kernels."""
    if kind == ADD:
        spec = KernelSpec("vecadd", 1, 1024, 1, precision)
        words = _ceil(spec.N, spec.lanes)
        stats = measure(gen_vecadd(spec), Memory(3 * 4 * words, name="vecadd"))
        return stats.cycles / spec.N
    macload = kind == LINEAR
    spec = KernelSpec("matmul", 16, 16, 64, precision, macload, MACLOAD_TILE if macload else BASELINE_TILE)
    a, b = random_operands(spec, np.random.default_rng(0))
    _, stats = run_matmul(spec, a, b)
    return stats.cycles / (spec.M * spec.N * spec.K)


def _software_cycles_per_op(kind: str, precision: int) -> float:
    # narrow operands zero-extend into any wider kernel
    return min(_measured_cycles_per_op(kind, p) for p in PRECISIONS if p >= precision)


def software_precision(bits: int) -> int:
    return next(p for p in sorted(PRECISIONS) if p >= bits)


@lru_cache(maxsize=16384)
def _rbe_cycles(key: tuple[Any, ...], calib_key: tuple[Any, ...]) -> int:
    mode, w_bits, i_bits, o_bits, kin, kout, h, w = key
    job = RbeJob(mode, w_bits, i_bits, o_bits, kin, kout, h, w, NormParams.identity(kout))
    return job_total_cycles(job, RbeCalibration(*calib_key))


def _extents(total: int, tile: int) -> list[tuple[int, int]]:
    """(extent, count) pairs of a dimension split into ``tile``-sized pieces."""
    full, rest = divmod(total, tile)
    pieces = [(tile, full)] if full else []
    if rest:
        pieces.append((rest, 1))
    return pieces


def compute_cycles(layer: LayerDescriptor, tile: TileSolution, calib: Calibration | None = None) -> int:
    calib = calib or Calibration()
    cores = calib.tiler.software_cores
    if layer.engine == "software":
        precision = software_precision(max(layer.w_bits, layer.i_bits))
        if layer.kind == ADD:
            work = layer.h * layer.w * layer.kout
        else:
            work = layer.macs
        cycles = _ceil(math.ceil(work * _software_cycles_per_op(layer.kind, precision)), cores)
    else:
        rbe_key = astuple(calib.rbe)
        cycles = 0
        for h, nh in _extents(layer.h, tile.h):
            for w, nw in _extents(layer.w, tile.w):
                for kout, nk in _extents(layer.kout, tile.kout):
                    for kin, nc in _extents(layer.kin, tile.kin):
                        key = (layer.kind, layer.w_bits, layer.i_bits, layer.o_bits, kin, kout, h, w)
                        cycles += nh * nw * nk * nc * _rbe_cycles(key, rbe_key)
    if tile.grid[3] > 1:
        # partial sums of split input channels are reduced on the cores
        cycles += _ceil((tile.grid[3] - 1) * layer.h * layer.w * layer.kout, cores)
    return cycles


def _dma(nbytes: int, calib: ClusterCalibration) -> int:
    if nbytes <= 0:
        return 0
    return dma_cycles(DmaDescriptor("in", 0, 0, nbytes), calib)


def transfer_cycles(layer: LayerDescriptor, tile: TileSolution, calib: Calibration | None = None) -> dict[str, int]:
    """On-chip (L2 <-> L1) stream, its prologue and epilogue, and the off-chip (L3) stream.

    The first load is the prologue and the last store the epilogue; ``onchip`` holds only
    the transfers that overlap compute.
    """
    calib = calib or Calibration()
    cl = calib.cluster
    spatial, kout_tiles, kin_tiles = tile.grid[0] * tile.grid[1], tile.grid[2], tile.grid[3]
    load_in, load_wgt, store = _dma(tile.in_bytes, cl), _dma(tile.wgt_bytes, cl), _dma(tile.out_bytes, cl)
    loads = (spatial * kout_tiles * kin_tiles - 1) * load_in + (kout_tiles * kin_tiles - 1) * load_wgt
    stores = (spatial * kout_tiles - 1) * store
    whole = tile_buffers(layer, layer.h, layer.w, layer.kin, layer.kout)
    l3_bytes = sum(
        nbytes
        for nbytes, where in zip(whole, (layer.input_in, layer.output_in, layer.weights_in))
        if where == "l3"
    )
    offchip = 0
    if l3_bytes:
        offchip = calib.tiler.l3_latency_cycles + math.ceil(l3_bytes / calib.tiler.l3_bytes_per_cycle)
    return {
        "onchip": max(loads, stores),
        "prologue": load_in + load_wgt,
        "epilogue": store,
        "offchip": offchip,
    }


def label_streams(offchip: int, onchip: int, compute: int) -> str:
    """Tallest stream; ties go to compute, then on-chip."""
    if compute >= onchip and compute >= offchip:
        return "compute"
    if onchip >= offchip:
        return "onchip"
    return "offchip"


def layer_latency(layer: LayerDescriptor, tile: TileSolution, calib: Calibration | None = None) -> int:
    calib = calib or Calibration()
    streams = transfer_cycles(layer, tile, calib)
    tallest = max(streams["offchip"], streams["onchip"], compute_cycles(layer, tile, calib))
    return tallest + streams["prologue"] + streams["epilogue"]


def _grid_extents(total: int) -> list[int]:
    """Extents cutting ``total`` into n near-equal pieces, one per distinct n, largest first."""
    return sorted({_ceil(total, n) for n in range(1, total + 1)}, reverse=True)


def _grid(layer: LayerDescriptor) -> list[tuple[int, int, int, int]]:
    step = _channel_step(layer)
    kouts = _channel_options(layer.kout, step)
    if layer.kind in CHANNELWISE:
        channels = [(k, k) for k in kouts]
    else:
        channels = [(kin, kout) for kin in _channel_options(layer.kin, step) for kout in kouts]
    spatial = [(h, w) for h in _grid_extents(layer.h) for w in _grid_extents(layer.w)]
    return [(h, w, kin, kout) for kin, kout in channels for h, w in spatial]


@lru_cache(maxsize=512)
def _fastest(layer_key: tuple[Any, ...], budget: int, calib_key: tuple[tuple[Any, ...], ...]) -> TileSolution | None:
    layer = LayerDescriptor("plan", *layer_key)
    rbe, cluster, tiler = calib_key
    calib = Calibration(rbe=RbeCalibration(*rbe), cluster=ClusterCalibration(*cluster), tiler=TilerCalibration(*tiler))
    full = (layer.h, layer.w, layer.kin, layer.kout)
    best: tuple[tuple[int, ...], TileSolution] | None = None
    for h, w, kin, kout in _grid(layer):
        size = sum(tile_buffers(layer, h, w, kin, kout))
        if (h, w, kin, kout) == full and size <= budget:
            tile = _solution(layer, h, w, kin, kout, False)
        elif 2 * size <= budget:
            tile = _solution(layer, h, w, kin, kout, True)
        else:
            continue
        key = (layer_latency(layer, tile, calib), tile.tiles, -kin, -kout, -h, -w)
        if best is None or key < best[0]:
            best = (key, tile)
    return best[1] if best else None


def plan_layer(layer: LayerDescriptor, budget: int | None = None, calib: Calibration | None = None) -> TileSolution:
    """Lowest-latency tile over a precision-independent grid of shapes.

    Spatial extents cut H and W into near-equal pieces; channel extents are the same
    options ``tile_layer`` walks. Ties go to fewer tiles, then full Kin, then the larger
    kout, h and w.
    """
    calib = calib or Calibration()
    budget = budget or calib.tiler.l1_budget
    calib_key = (astuple(calib.rbe), astuple(calib.cluster), astuple(calib.tiler))
    found = _fastest(astuple(layer)[1:], budget, calib_key)
    if found is None:
        raise _infeasible(layer, budget)
    if found.grid[3] > 1:
        logger.info("layer %s: Kin split into %d tiles of %d channels", layer.name, found.grid[3], found.kin)
    return replace(found)


@dataclass(slots=True)
class LayerSchedule:
    layer: LayerDescriptor
    tile: TileSolution
    offchip_cycles: int
    onchip_cycles: int
    compute_cycles: int
    prologue_cycles: int
    epilogue_cycles: int
    energy_uj: float

    @property
    def latency_cycles(self) -> int:
        streams = max(self.offchip_cycles, self.onchip_cycles, self.compute_cycles)
        return streams + self.prologue_cycles + self.epilogue_cycles

    @property
    def boundedness(self) -> str:
        return label_streams(self.offchip_cycles, self.onchip_cycles, self.compute_cycles)

    def row(self) -> dict[str, Any]:
        return {
            "layer": self.layer.name,
            "kind": self.layer.kind,
            "engine": self.layer.engine,
            "tiles": self.tile.tiles,
            "tile_h": self.tile.h,
            "tile_w": self.tile.w,
            "tile_kin": self.tile.kin,
            "tile_kout": self.tile.kout,
            "footprint_bytes": self.tile.footprint,
            "offchip_cycles": self.offchip_cycles,
            "onchip_cycles": self.onchip_cycles,
            "compute_cycles": self.compute_cycles,
            "prologue_cycles": self.prologue_cycles,
            "epilogue_cycles": self.epilogue_cycles,
            "latency_cycles": self.latency_cycles,
            "boundedness": self.boundedness,
            "energy_uj": round(self.energy_uj, 6),
        }


@dataclass(slots=True)
class NetworkSchedule:
    name: str
    operating_point: OperatingPoint
    budget: int
    layers: list[LayerSchedule] = field(default_factory=list)
    errors: list[dict[str, Any]] = field(default_factory=list)

    @property
    def latency_cycles(self) -> int:
        return sum(s.latency_cycles for s in self.layers)

    @property
    def energy_uj(self) -> float:
        return sum(s.energy_uj for s in self.layers)

    def summary(self) -> dict[str, Any]:
        counts = {b: 0 for b in BOUNDS}
        for label in classify(self):
            counts[label] += 1
        return {
            "network": self.name,
            "layers": len(self.layers),
            "budget_bytes": self.budget,
            "latency_cycles": self.latency_cycles,
            "latency_ms": self.latency_cycles / self.operating_point.freq_hz * 1e3,
            "energy_uj": round(self.energy_uj, 6),
            "boundedness": counts,
            "operating_point": self.operating_point.to_dict(),
            "errors": list(self.errors),
        }

    def to_dict(self) -> dict[str, Any]:
        payload = self.summary()
        payload["per_layer"] = [s.row() for s in self.layers]
        return payload

    def write_csv(self, path: str | Path) -> Path:
        return write_rows(path, SCHEDULE_FIELDS, (s.row() for s in self.layers))


def schedule_layer(
    layer: LayerDescriptor,
    operating_point: OperatingPoint | None = None,
    calib: Calibration | None = None,
    budget: int | None = None,
) -> LayerSchedule:
    op = operating_point or OperatingPoint()
    calib = calib or Calibration()
    tile = plan_layer(layer, budget, calib)
    streams = transfer_cycles(layer, tile, calib)
    compute = compute_cycles(layer, tile, calib)
    sched = LayerSchedule(
        layer=layer,
        tile=tile,
        offchip_cycles=streams["offchip"],
        onchip_cycles=streams["onchip"],
        compute_cycles=compute,
        prologue_cycles=streams["prologue"],
        epilogue_cycles=streams["epilogue"],
        energy_uj=0.0,
    )
    activity = "rbe" if layer.engine == "rbe" else "matmul"
    power_mw = float(power_model(calib.power).power_mw(op.vdd, op.freq_hz, op.vbb, activity))
    sched.energy_uj = power_mw * sched.latency_cycles / op.freq_hz * 1e3
    logger.info(
        "layer %s: %d cycles, %s-bound, %d tiles",
        layer.name,
        sched.latency_cycles,
        sched.boundedness,
        tile.tiles,
    )
    return sched


def schedule_network(
    layers: Iterable[LayerDescriptor],
    operating_point: OperatingPoint | None = None,
    calib: Calibration | None = None,
    budget: int | None = None,
    name: str = "network",
    collect_errors: bool = False,
) -> NetworkSchedule:
    """Schedule every layer. With ``collect_errors`` infeasible layers are listed, not raised."""
    calib = calib or Calibration()
    op = operating_point or OperatingPoint()
    schedule = NetworkSchedule(name=name, operating_point=op, budget=budget or calib.tiler.l1_budget)
    for layer in layers:
        try:
            schedule.layers.append(schedule_layer(layer, op, calib, schedule.budget))
        except InfeasibleTilingError as exc:
            if not collect_errors:
                raise
            schedule.errors.append(
                {"layer": exc.layer, "binding_buffer": exc.binding_buffer, "needed": exc.needed, "budget": exc.budget}
            )
    return schedule


def classify(schedule: NetworkSchedule) -> list[str]:
    return [s.boundedness for s in schedule.layers]


def energy_saving(schedule: NetworkSchedule, baseline: NetworkSchedule) -> float:
    """Fraction of the baseline energy saved by ``schedule``."""
    if baseline.energy_uj <= 0:
        raise RangeError("baseline schedule has no energy")
    return 1.0 - schedule.energy_uj / baseline.energy_uj


# Tiled execution


def execute_tiled(
    layer: LayerDescriptor,
    acts: QTensor,
    wgts: QTensor,
    norm: NormParams,
    budget: int | None = None,
    tile: TileSolution | None = None,
    overflow: str = "trap",
) -> QTensor:
    """Run a stride-1 RBE layer tile by tile through the engine model and stitch the output.

    Tiles alternate between the two halves of an L1 image the size of ``budget``. Layers
    whose tiling splits Kin are cost-modelled only.
    """
    if layer.engine != "rbe":
        raise ShapeError(f"layer {layer.name!r}: only RBE layers execute tiled")
    if layer.stride != 1:
        raise ShapeError(f"layer {layer.name!r}: tiled execution needs stride 1")
    if acts.shape != (layer.h, layer.w, layer.kin):
        raise ShapeError(f"activations {acts.shape} do not match layer input {(layer.h, layer.w, layer.kin)}")
    if wgts.shape != (layer.kout, layer.kin, layer.side, layer.side):
        raise ShapeError(f"weights {wgts.shape} do not match layer {layer.name!r}")
    budget = budget or Calibration().tiler.l1_budget
    tile = tile or tile_layer(layer, budget)
    if tile.kin != layer.kin:
        raise ShapeError(f"layer {layer.name!r}: Kin-split tiling is not executable")
    pad = 1 if layer.kind == CONV3X3 else 0
    src = np.pad(acts.data, ((pad, pad), (pad, pad), (0, 0)))
    halo = 2 * pad
    mem = Memory(budget // 4 * 4, name="l1")
    half = budget // 2 // 4 * 4
    out = np.zeros((layer.h, layer.w, layer.kout), dtype=np.int64)
    index = 0
    for k0 in range(0, layer.kout, tile.kout):
        k1 = min(k0 + tile.kout, layer.kout)
        w_slice = QTensor.from_array(wgts.data[k0:k1], wgts.bitwidth)
        n_slice = NormParams(norm.scale[k0:k1], norm.bias[k0:k1], norm.shift, norm.relu)
        for y0 in range(0, layer.h, tile.h):
            th = min(tile.h, layer.h - y0)
            for x0 in range(0, layer.w, tile.w):
                tw = min(tile.w, layer.w - x0)
                job = RbeJob(
                    layer.kind, layer.w_bits, layer.i_bits, layer.o_bits,
                    layer.kin, k1 - k0, th, tw, n_slice, padding="valid",
                )
                place(job, half * (index % 2) if tile.double_buffered else 0)
                a_slice = QTensor.from_array(src[y0 : y0 + th + halo, x0 : x0 + tw + halo], acts.bitwidth)
                stage_job(job, mem, a_slice, w_slice)
                out[y0 : y0 + th, x0 : x0 + tw, k0:k1] = execute_functional(job, mem, overflow)
                index += 1
    logger.debug("layer %s executed in %d tiles", layer.name, index)
    return QTensor(out.shape, out, layer.o_bits)


# Network files


def layer_from_dict(payload: dict[str, Any], defaults: dict[str, Any] | None = None) -> LayerDescriptor:
    merged = {**(defaults or {}), **payload}
    try:
        return LayerDescriptor(**merged)
    except TypeError as exc:
        raise FormatError(f"layer {merged.get('name', '?')!r}: {exc}") from exc


def network_from_dict(payload: dict[str, Any]) -> tuple[str, list[LayerDescriptor]]:
    if not isinstance(payload, dict) or not isinstance(payload.get("layers"), list):
        raise FormatError("network file needs a 'layers' list")
    defaults = payload.get("defaults", {})
    layers = [layer_from_dict(item, defaults) for item in payload["layers"]]
    if not layers:
        raise FormatError("network has no layers")
    return str(payload.get("name", "network")), layers


def load_network(path: str | Path) -> tuple[str, list[LayerDescriptor]]:
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise FormatError(f"network file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"network file is not valid JSON: {path}: {exc}") from exc
    return network_from_dict(payload)
