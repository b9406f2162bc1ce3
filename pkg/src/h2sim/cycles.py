"""Timing and traffic model for the three engines.

All engines are output stationary.  A grid iteration maps a block of
channels (and, for the Weight Update Engine, timesteps) onto the PE array
and sweeps every spatial tile.  Within a phase the GLB ping-pong hides
transfers behind compute, so a phase costs ``max(compute, units, memory)``.

Throughput primitives (all configurable): one window per LUT-PE lane per
cycle, one valid MAC per Backward Engine PE per cycle, one element per
Soma/Grad unit per cycle, finder scan of ``scan_width`` mask bits per
cycle overlapped with the PE work it feeds.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .core import SubBatchRecord, WeightLayer
from .engines import dense_macs, pool_ops, pool_or, uses_lut
from .errors import ConfigurationError
from .lut import LutPeConfig, build_cost, kernel_segments
from .sparse import count_tasks, window_counts
from .tensors import LayerKind

KB = 1024


def ceil_div(a, b):
    return -(-a // b)


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class TileSpec:
    tile_h: int = 16
    tile_w: int = 16

    def __post_init__(self):
        if self.tile_h < 1 or self.tile_w < 1:
            raise ConfigurationError("tile dimensions must be positive")

    def binary_bytes(self, h=None, w=None) -> int:
        h = self.tile_h if h is None else h
        w = self.tile_w if w is None else w
        return ceil_div(h * w, 8)

    def fp16_bytes(self, h=None, w=None) -> int:
        h = self.tile_h if h is None else h
        w = self.tile_w if w is None else w
        return 2 * h * w


@dataclass(frozen=True)
class EngineConfig:
    kind: str
    pe_rows: int
    pe_cols: int
    parallelism: int
    glb_bytes: int
    subluts_per_pe: int = 0
    sublut_entries: int = 0
    bytes_per_entry: int = 2
    t_max_pe: int = 1
    units: int = 16
    scan_width: int = 16
    sync_cycles: int = 1
    clock_hz: float = 800e6
    tile: TileSpec = field(default_factory=TileSpec)
    baseline: bool = False

    def __post_init__(self):
        if self.kind not in ("FE", "WUE", "BE"):
            raise ConfigurationError(f"unknown engine kind {self.kind!r}")
        for name in ("pe_rows", "pe_cols", "parallelism", "glb_bytes", "t_max_pe", "units",
                     "scan_width", "bytes_per_entry"):
            if getattr(self, name) < 1:
                raise ConfigurationError(f"{self.kind}.{name} must be positive")
        if self.sync_cycles < 0 or self.clock_hz <= 0:
            raise ConfigurationError(f"{self.kind}: bad sync/clock setting")
        if self.kind != "BE":
            LutPeConfig(self.subluts_per_pe, self.sublut_entries,
                        (1, self.subluts_per_pe * int(math.log2(max(self.sublut_entries, 2)))),
                        self.bytes_per_entry)

    @property
    def lut(self) -> LutPeConfig:
        bits = int(math.log2(self.sublut_entries))
        return LutPeConfig(self.subluts_per_pe, self.sublut_entries, (1, self.subluts_per_pe * bits),
                           self.bytes_per_entry)

    @property
    def lut_bytes(self) -> int:
        if self.kind == "BE":
            return 0
        return self.pe_rows * self.pe_cols * self.lut.bytes_per_pe

    def with_(self, **changes) -> "EngineConfig":
        return replace(self, **changes)


FE_DEFAULT = EngineConfig("FE", 64, 16, 4, glb_bytes=503 * KB, subluts_per_pe=3, sublut_entries=8,
                          units=16)
WUE_DEFAULT = EngineConfig("WUE", 10, 128, 4, glb_bytes=2684 * KB, subluts_per_pe=2, sublut_entries=16,
                           t_max_pe=10, units=128)
BE_DEFAULT = EngineConfig("BE", 16, 64, 4, glb_bytes=int(4840.5 * KB), units=64)


@dataclass(frozen=True)
class MemoryConfig:
    channels: int = 3
    bytes_per_sec: float = 128e9

    def __post_init__(self):
        if self.channels < 1 or self.bytes_per_sec <= 0:
            raise ConfigurationError("memory needs at least one channel and positive bandwidth")

    def bytes_per_cycle(self, clock_hz: float) -> float:
        return self.bytes_per_sec / clock_hz


# --------------------------------------------------------------------------
# tiling
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Tile:
    y0: int
    x0: int
    h: int
    w: int
    in_h: int
    in_w: int

    @property
    def windows(self) -> int:
        return self.h * self.w


@dataclass(frozen=True)
class TilingPlan:
    out_hw: tuple
    in_hw: tuple
    tiles: tuple

    @property
    def windows(self) -> int:
        return sum(t.windows for t in self.tiles)

    def __len__(self):
        return len(self.tiles)


def tile_feature_map(out_hw, tile: TileSpec = TileSpec(), k=1, stride=1, pad=0, in_hw=None) -> TilingPlan:
    """Cover an output map with tiles; each tile notes its input (halo) extent."""
    ho, wo = out_hw
    hi, wi = in_hw if in_hw is not None else out_hw
    tiles = []
    for y0 in range(0, ho, tile.tile_h):
        h = min(tile.tile_h, ho - y0)
        iy0 = max(0, y0 * stride - pad)
        iy1 = min(hi, (y0 + h - 1) * stride - pad + k)
        for x0 in range(0, wo, tile.tile_w):
            w = min(tile.tile_w, wo - x0)
            ix0 = max(0, x0 * stride - pad)
            ix1 = min(wi, (x0 + w - 1) * stride - pad + k)
            tiles.append(Tile(y0, x0, h, w, max(iy1 - iy0, 0), max(ix1 - ix0, 0)))
    return TilingPlan((ho, wo), (hi, wi), tuple(tiles))


# --------------------------------------------------------------------------
# workloads and reports
# --------------------------------------------------------------------------

@dataclass
class LayerWorkload:
    """One weight layer for one sub-batch, with its sparsity source.

    Replay mode carries masks shaped ``(N, T, ...)``; synthetic mode carries
    zero fractions (``out_sparsity`` for this layer's spike-gradient mask,
    ``in_sparsity`` for the upper layer's potential-gradient mask).
    """

    layer: WeightLayer
    upper: Optional[WeightLayer]
    n: int
    t: int
    spike_mask: Optional[np.ndarray] = None
    grad_mask: Optional[np.ndarray] = None
    upper_grad_mask: Optional[np.ndarray] = None
    out_sparsity: Optional[float] = None
    in_sparsity: Optional[float] = None

    @property
    def replay(self) -> bool:
        return self.spike_mask is not None

    @property
    def slices(self) -> int:
        return self.n * self.t

    @property
    def valid_density(self) -> float:
        if self.spike_mask is not None:
            return float(np.mean(self.spike_mask))
        return 1.0 - (self.out_sparsity or 0.0)

    @property
    def grad_density(self) -> float:
        if self.grad_mask is not None:
            return float(np.mean(self.grad_mask))
        return self.valid_density

    @property
    def in_density(self) -> float:
        if self.upper_grad_mask is not None:
            return float(np.mean(self.upper_grad_mask))
        return 1.0 - (self.in_sparsity or 0.0)


@dataclass
class LayerCycleReport:
    engine: str
    layer: int
    compute_cycles: int = 0
    unit_cycles: int = 0
    memory_cycles: int = 0
    grid_iterations: int = 0
    ops: Dict[str, int] = field(default_factory=dict)
    traffic: Dict[str, int] = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)

    @property
    def bound_cycles(self) -> int:
        return max(self.compute_cycles, self.unit_cycles, self.memory_cycles)

    @property
    def bound_by(self) -> str:
        parts = {"compute": self.compute_cycles, "units": self.unit_cycles, "memory": self.memory_cycles}
        return max(parts, key=parts.get)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["bound_cycles"] = self.bound_cycles
        d["bound_by"] = self.bound_by
        return d


def _memory_cycles(traffic: Dict[str, float], cfg: EngineConfig, mem: MemoryConfig) -> int:
    bpc = mem.bytes_per_cycle(cfg.clock_hz)
    return int(math.ceil(max(traffic.values(), default=0) / bpc))


def _check_glb(cfg: EngineConfig, working_set: int, resident: int = 0):
    need = 2 * working_set + resident
    if need > cfg.glb_bytes:
        raise ConfigurationError(
            f"{cfg.kind} GLB overflow: needs {need} bytes (ping-pong working set {working_set} x 2"
            f" + resident {resident}) but holds {cfg.glb_bytes}")


def _halo_bits(plan: TilingPlan) -> int:
    return sum(ceil_div(t.in_h * t.in_w, 8) for t in plan.tiles)


# --------------------------------------------------------------------------
# Forward Engine
# --------------------------------------------------------------------------

def fe_cycles(work: LayerWorkload, cfg: EngineConfig = FE_DEFAULT, mem: MemoryConfig = MemoryConfig()
              ) -> LayerCycleReport:
    layer = work.layer
    conn = layer.connection
    cin, hp, wp = conn.pooled_shape
    cout, ho, wo = conn.out_shape
    slices = work.slices
    rep = LayerCycleReport("FE", layer.index)
    rb, cb = ceil_div(cin, cfg.pe_rows), ceil_div(cout, cfg.pe_cols)
    tb = ceil_div(slices, cfg.t_max_pe)
    out_elems = slices * cout * ho * wo
    lut = uses_lut(layer) and not cfg.baseline
    ops = Counter()
    traffic = Counter()

    if conn.kind is LayerKind.CONV:
        k = conn.kernel
        plan = tile_feature_map((ho, wo), cfg.tile, k, conn.stride, conn.pad, (hp, wp))
        rep.grid_iterations = rb * cb * tb
        if lut:
            segs = kernel_segments(k, cfg.lut.bits)
            pes = ceil_div(len(segs), cfg.subluts_per_pe)  # logical PEs per kernel
            per_slice = sum(ceil_div(t.windows, cfg.parallelism) for t in plan.tiles) * pes
            build = max(build_cost(length) for _, _, length in segs)
            rep.compute_cycles = rb * cb * slices * per_slice + rep.grid_iterations * build
            ops["fe.lut_reads"] = slices * cin * cout * ho * wo * len(segs)
            ops["fe.adds"] = slices * cout * ho * wo * (cin * len(segs) - 1)
            ops["fe.lut_build_adds"] = cin * cout * sum(build_cost(l) for _, _, l in segs)
            traffic["mem01"] += cb * slices * cin * _halo_bits(plan)
        else:
            macs = dense_macs(conn)
            rep.compute_cycles = slices * ceil_div(macs, cfg.pe_rows * cfg.pe_cols * cfg.parallelism)
            ops["fe.macs"] = slices * macs
            if conn.pools:
                ops["fe.pool_ops"] = slices * pool_ops(conn)
            rep.flags.append("dense-real-input" + (" (encoding)" if layer.spec.is_encoding else ""))
            traffic["mem01"] += cb * slices * cin * sum(2 * t.in_h * t.in_w for t in plan.tiles)
        weight_bytes = cin * cout * k * k * 2
        in_tile = max((t.in_h * t.in_w for t in plan.tiles), default=0)
        working = (cfg.pe_rows * cfg.parallelism * ceil_div(in_tile, 8) * (1 if lut else 16)
                   + min(cin, cfg.pe_rows) * min(cout, cfg.pe_cols) * k * k * 2
                   + min(cout, cfg.pe_cols) * cfg.parallelism * cfg.tile.fp16_bytes())
        # compressed potentials plus spike and mask bits
        out_bytes = out_elems * (2 * work.valid_density + 0.25)
    else:
        fan_in = cin * hp * wp  # flattened input
        rep.grid_iterations = cb * ceil_div(fan_in, cfg.pe_rows) * tb
        if lut:
            lanes = cfg.pe_rows * cfg.subluts_per_pe * cfg.parallelism
            rep.compute_cycles = slices * cb * ceil_div(fan_in, lanes)
            ops["fe.lut_reads"] = slices * fan_in * cout
            ops["fe.adds"] = slices * cout * max(fan_in - 1, 0)
            traffic["mem01"] += slices * ceil_div(fan_in, 8)
        else:
            macs = dense_macs(conn)
            rep.compute_cycles = slices * ceil_div(macs, cfg.pe_rows * cfg.pe_cols * cfg.parallelism)
            ops["fe.macs"] = slices * macs
            if conn.pools:
                ops["fe.pool_ops"] = slices * pool_ops(conn)
            rep.flags.append("dense-real-input")
            traffic["mem01"] += slices * fan_in * 2
        # one resident weight block serves every (sample, timestep) vector
        weight_bytes = ceil_div(fan_in * cout * 2, tb)
        working = min(fan_in, cfg.pe_rows) * min(cout, cfg.pe_cols) * 2 + fan_in + cout * 2
        out_bytes = out_elems * (2 + 0.25)  # FC potentials stay uncompressed

    ops["fe.soma_ops"] = out_elems
    traffic["mem01"] += tb * weight_bytes + out_bytes
    unit_elems = out_elems + ops.get("fe.pool_ops", 0)
    rep.unit_cycles = ceil_div(unit_elems, cfg.units)
    _check_glb(cfg, working)
    rep.traffic = {key: int(math.ceil(val)) for key, val in traffic.items()}
    rep.memory_cycles = _memory_cycles(traffic, cfg, mem)
    rep.ops = dict(ops)
    return rep


# --------------------------------------------------------------------------
# Weight Update Engine
# --------------------------------------------------------------------------

def wue_cycles(work: LayerWorkload, cfg: EngineConfig = WUE_DEFAULT, mem: MemoryConfig = MemoryConfig()
               ) -> LayerCycleReport:
    layer = work.layer
    conn = layer.connection
    cin, hp, wp = conn.pooled_shape
    cout, ho, wo = conn.out_shape
    n, t_steps = work.n, work.t
    slices = work.slices
    rep = LayerCycleReport("WUE", layer.index)
    rows_used = min(t_steps, cfg.pe_rows)
    tb = ceil_div(t_steps, cfg.pe_rows)  # rows hold timesteps
    cb = ceil_div(cout, cfg.pe_cols)
    if t_steps < cfg.pe_rows:
        rep.flags.append(f"row utilization {rows_used}/{cfg.pe_rows}")
    lut = uses_lut(layer) and not cfg.baseline
    ops = Counter()
    traffic = Counter()
    rep.grid_iterations = n * tb * cb

    if conn.kind is LayerKind.CONV:
        k = conn.kernel
        plan = tile_feature_map((ho, wo), cfg.tile, k, conn.stride, conn.pad, (hp, wp))
        if lut:
            seg_len = cfg.lut.bits * cfg.subluts_per_pe
            segs = sum(t.h * ceil_div(t.w, seg_len) for t in plan.tiles)
            per_seg = ceil_div(cin * k * k, cfg.parallelism) + build_cost(cfg.lut.bits)
            rep.compute_cycles = rep.grid_iterations * segs * per_seg
            sub = ceil_div(wo, cfg.lut.bits)  # functional 1 x bits sub-LUTs per row
            ops["wue.lut_reads"] = slices * cin * cout * ho * sub * k * k
            ops["wue.adds"] = ops["wue.lut_reads"]
            ops["wue.lut_build_adds"] = slices * cout * ho * sub * build_cost(cfg.lut.bits)
            traffic["mem01"] += cb * slices * cin * _halo_bits(plan)
        else:
            macs = dense_macs(conn)
            rep.compute_cycles = slices * ceil_div(macs, cfg.pe_rows * cfg.pe_cols * cfg.parallelism)
            ops["wue.macs"] = slices * macs
            if conn.pools:
                ops["wue.pool_ops"] = slices * pool_ops(conn)
            rep.flags.append("dense-real-input")
            traffic["mem01"] += cb * slices * cin * sum(2 * t.in_h * t.in_w for t in plan.tiles)
        dw_bytes = k * k * cin * cout * 2
        resident = k * k * cin * min(cout, cfg.pe_cols) * 2
        working = cfg.pe_rows * cfg.parallelism * (cfg.tile.binary_bytes() + cfg.tile.fp16_bytes())
    else:
        fan_in = cin * hp * wp
        if lut:
            rep.compute_cycles = rep.grid_iterations * ceil_div(fan_in, cfg.subluts_per_pe * cfg.parallelism)
            ops["wue.lut_reads"] = slices * fan_in * cout
            ops["wue.adds"] = slices * fan_in * cout
            traffic["mem01"] += cb * slices * ceil_div(fan_in, 8)
        else:
            macs = dense_macs(conn)
            rep.compute_cycles = slices * ceil_div(macs, cfg.pe_rows * cfg.pe_cols * cfg.parallelism)
            ops["wue.macs"] = slices * macs
            if conn.pools:
                ops["wue.pool_ops"] = slices * pool_ops(conn)
            rep.flags.append("dense-real-input")
            traffic["mem01"] += cb * slices * fan_in * 2
        dw_bytes = fan_in * cout * 2
        # gradient rows are accumulated one input chunk at a time
        chunk = min(fan_in, cfg.pe_rows * cfg.subluts_per_pe * cfg.parallelism)
        resident = chunk * min(cout, cfg.pe_cols) * 2
        working = cfg.pe_rows * (chunk + 2 * cfg.pe_cols)

    traffic["mem01"] += slices * cout * ho * wo * 2  # potential gradients, FP16
    traffic["mem2"] += dw_bytes
    rep.unit_cycles = ceil_div(ops.get("wue.pool_ops", 0), cfg.units)
    _check_glb(cfg, working, resident)
    rep.traffic = {key: int(math.ceil(val)) for key, val in traffic.items()}
    rep.memory_cycles = _memory_cycles(traffic, cfg, mem)
    rep.ops = dict(ops)
    return rep


# --------------------------------------------------------------------------
# Backward Engine
# --------------------------------------------------------------------------

def tile_pair_tasks(out_mask, in_mask, conn, plan: TilingPlan) -> List[np.ndarray]:
    """Task counts per tile as ``(C_out_mask, C_in_mask)`` matrices."""
    out_mask = np.asarray(out_mask, dtype=bool)
    counts = window_counts(in_mask, conn.kernel, conn.stride, conn.pad, out_mask.shape[-2:])
    result = []
    for t in plan.tiles:
        ys, xs = slice(t.y0, t.y0 + t.h), slice(t.x0, t.x0 + t.w)
        om = out_mask[:, ys, xs].reshape(out_mask.shape[0], -1).astype(np.float64)
        cm = counts[:, ys, xs].reshape(counts.shape[0], -1).astype(np.float64)
        result.append(np.rint(om @ cm.T).astype(np.int64))
    return result


def _block_max(pairs: np.ndarray, cols: int, rows: int) -> np.ndarray:
    """Max task count per grid block; columns map output channels, rows input channels."""
    cl, cu = pairs.shape
    cb, rb = ceil_div(cl, cols), ceil_div(cu, rows)
    padded = np.zeros((cb * cols, rb * rows), dtype=pairs.dtype)
    padded[:cl, :cu] = pairs
    return padded.reshape(cb, cols, rb, rows).max(axis=(1, 3))


def _be_slice_cycles(out_mask, in_mask, conn, plan, cfg: EngineConfig) -> tuple:
    """Cycles and task count of one (sample, timestep) slice in sparse mode."""
    cycles = 0
    tasks = 0
    for t, pairs in zip(plan.tiles, tile_pair_tasks(out_mask, in_mask, conn, plan)):
        scan = ceil_div(t.windows, cfg.scan_width)
        mac = -(-_block_max(pairs, cfg.pe_cols, cfg.pe_rows) // cfg.parallelism)
        cycles += int(np.maximum(mac, scan).sum()) + mac.size * cfg.sync_cycles
        tasks += int(pairs.sum())
    return cycles, tasks


def be_cycles(work: LayerWorkload, cfg: EngineConfig = BE_DEFAULT, mem: MemoryConfig = MemoryConfig(),
              samples: Optional[int] = None, seed: int = 0) -> LayerCycleReport:
    """Backward Engine cost of producing this layer's potential gradients.

    The spatial term flows through the upper weight layer; the top layer
    only runs the Grad units on the loss gradient.  ``samples`` bounds how
    many random slices synthetic mode draws (all slices by default).
    """
    layer = work.layer
    c, h, w = layer.connection.out_shape
    slices = work.slices
    elems = slices * c * h * w
    rep = LayerCycleReport("BE", layer.index)
    ops = Counter()
    traffic = Counter()
    sparse = not cfg.baseline
    ops["be.grad_ops"] = 2 * elems
    unit_elems = elems
    upper = work.upper
    is_conv_layer = layer.connection.kind is LayerKind.CONV
    compressed = is_conv_layer and sparse

    if upper is not None:
        conn = upper.connection
        cl, hp, wp = conn.pooled_shape
        cu, ho, wo = conn.out_shape
        rb, cb = ceil_div(cu, cfg.pe_rows), ceil_div(cl, cfg.pe_cols)
        rep.grid_iterations = slices * rb * cb
        if conn.pools:
            ops["be.pool_ops"] = slices * pool_ops(conn)
            unit_elems += ops["be.pool_ops"]
        if conn.kind is LayerKind.FC:
            lanes = cfg.pe_rows * cfg.parallelism
            rep.compute_cycles = slices * ceil_div(cl * hp * wp, cfg.pe_cols) * ceil_div(cu, lanes)
            ops["be.dense_macs"] = slices * cl * hp * wp * cu
            rep.flags.append("finders bypassed (FC)")
            traffic["mem01"] += slices * cu * 2 + cl * hp * wp * cu * 2
            working = cfg.pe_rows * cfg.pe_cols * cfg.parallelism * 2
        else:
            k = conn.kernel
            plan = tile_feature_map((hp, wp), cfg.tile)
            if sparse:
                cycles, tasks, scan_bits = _be_sparse_compute(work, conn, plan, cfg, samples, seed)
                rep.compute_cycles = cycles
                ops["be.macs"] = tasks
                ops["be.finder_scan_bits"] = slices * cl * hp * wp
                ops["be.tags"] = scan_bits
                in_bytes = cb * slices * cu * ho * wo * (2 * work.in_density + 0.125)
            else:
                full = window_counts(np.ones((1, ho, wo), dtype=bool), k, conn.stride, conn.pad, (hp, wp))[0]
                per_slice = 0
                for t in plan.tiles:
                    taps = int(full[t.y0:t.y0 + t.h, t.x0:t.x0 + t.w].sum())
                    per_slice += rb * cb * (ceil_div(taps, cfg.parallelism) + cfg.sync_cycles)
                rep.compute_cycles = slices * per_slice
                ops["be.macs"] = slices * cl * cu * int(full.sum())
                rep.flags.append("dense baseline")
                in_bytes = cb * slices * cu * ho * wo * 2
            traffic["mem01"] += in_bytes + slices * cl * cu * k * k * 2
            working = (cfg.pe_rows * cfg.tile.fp16_bytes(cfg.tile.tile_h + k - 1, cfg.tile.tile_w + k - 1)
                       + min(cl, cfg.pe_cols) * min(cu, cfg.pe_rows) * k * k * 2
                       + min(cl, cfg.pe_cols) * cfg.tile.fp16_bytes())
    else:
        rep.flags.append("loss gradient only")
        working = cfg.units * 8

    if compressed:
        ops["be.decompressed"] = int(round(elems * work.valid_density)) if not work.replay \
            else int(np.sum(work.spike_mask))
        own_read = elems * (2 * work.valid_density + 0.25)
        own_write = elems * (2 * work.grad_density + 0.125)
    else:
        own_read = elems * (2 + 0.125)
        own_write = elems * 2
    traffic["mem01"] += own_read + own_write
    rep.unit_cycles = ceil_div(unit_elems, cfg.units)
    _check_glb(cfg, working)
    rep.traffic = {key: int(math.ceil(val)) for key, val in traffic.items()}
    rep.memory_cycles = _memory_cycles(traffic, cfg, mem)
    rep.ops = dict(ops)
    return rep


def _be_sparse_compute(work: LayerWorkload, conn, plan, cfg, samples, seed):
    """Sparse-mode compute cycles, task count and tag count for a layer."""
    slices = work.slices
    c, h, w = work.layer.connection.out_shape
    cu, ho, wo = conn.out_shape
    if work.replay:
        if work.upper_grad_mask is None:
            raise ConfigurationError(f"layer {work.layer.index}: replay needs the upper gradient mask")
        out_masks = work.spike_mask.reshape(slices, c, h, w)
        in_masks = work.upper_grad_mask.reshape(slices, cu, ho, wo)
        chosen = range(slices)
        scale = 1.0
    else:
        rng = np.random.default_rng(seed)
        count = slices if samples is None else max(1, min(samples, slices))
        out_d = 1.0 - (work.out_sparsity or 0.0)
        in_d = 1.0 - (work.in_sparsity or 0.0)
        out_masks = [rng.random((c, h, w)) < out_d for _ in range(count)]
        in_masks = [rng.random((cu, ho, wo)) < in_d for _ in range(count)]
        chosen = range(count)
        scale = slices / count
    cycles = tasks = tags = 0
    for i in chosen:
        om = pool_or(out_masks[i], conn.pools)
        cyc, tk = _be_slice_cycles(om, in_masks[i], conn, plan, cfg)
        cycles += cyc
        tasks += tk
        tags += int(om.sum()) * cu
    return int(round(cycles * scale)), int(round(tasks * scale)), int(round(tags * scale))


# --------------------------------------------------------------------------
# whole-network helpers
# --------------------------------------------------------------------------

def workloads_from_records(plan: Sequence[WeightLayer], record: SubBatchRecord) -> List[LayerWorkload]:
    works = []
    for j, layer in enumerate(plan):
        rec = record.layers[j]
        upper = plan[j + 1] if j + 1 < len(plan) else None
        n, t = rec.u.shape[:2]
        works.append(LayerWorkload(
            layer, upper, n, t,
            spike_mask=rec.spike_mask, grad_mask=rec.grad_mask,
            upper_grad_mask=record.layers[j + 1].grad_mask if upper is not None else None))
    return works


def synthetic_workloads(plan: Sequence[WeightLayer], n: int, t: int,
                        sparsity: Optional[Sequence] = None) -> List[LayerWorkload]:
    """Workloads from per-layer ``(output, input)`` zero fractions (missing means dense)."""
    works = []
    for j, layer in enumerate(plan):
        upper = plan[j + 1] if j + 1 < len(plan) else None
        o, i = (sparsity[j] if sparsity is not None and j < len(sparsity) and sparsity[j] is not None
                else (0.0, 0.0))
        for name, val in (("output", o), ("input", i)):
            if not 0.0 <= val < 1.0:
                raise ConfigurationError(f"layer {j}: {name} sparsity {val} outside [0, 1)")
        works.append(LayerWorkload(layer, upper, n, t, out_sparsity=o, in_sparsity=i))
    return works


def replay_counters(records: Sequence[SubBatchRecord], plan: Sequence[WeightLayer],
                    fe_lut: LutPeConfig = None, wue_lut: LutPeConfig = None) -> List[Counter]:
    """Closed-form op counts of the engine functional run, from recorded tensors."""
    from .lut import FE_LUT, WUE_LUT
    fe_lut = fe_lut or FE_LUT
    wue_lut = wue_lut or WUE_LUT
    counters = [Counter() for _ in plan]
    for record in records:
        if len(record.layers) != len(plan):
            raise ConfigurationError(f"record has {len(record.layers)} layers, plan {len(plan)}")
        for j, layer in enumerate(plan):
            ctr = counters[j]
            rec = record.layers[j]
            conn = layer.connection
            n, t = rec.u.shape[:2]
            if tuple(rec.u.shape[2:]) != tuple(conn.out_shape):
                raise ConfigurationError(f"layer {j}: recorded shape {rec.u.shape[2:]} != {conn.out_shape}")
            slices = n * t
            cin, _, _ = conn.pooled_shape
            cout, ho, wo = conn.out_shape
            flat_in = int(np.prod(conn.pooled_shape))
            lut = uses_lut(layer)
            if lut and conn.kind is LayerKind.CONV:
                segs = kernel_segments(conn.kernel, fe_lut.bits)
                ctr["fe.lut_build_adds"] += cin * cout * sum(build_cost(l) for _, _, l in segs)
                ctr["fe.lut_reads"] += slices * cin * cout * ho * wo * len(segs)
                ctr["fe.adds"] += slices * cout * ho * wo * (cin * len(segs) - 1)
                sub = ceil_div(wo, wue_lut.bits)
                ctr["wue.lut_reads"] += slices * cin * cout * ho * sub * conn.kernel ** 2
                ctr["wue.adds"] += slices * cin * cout * ho * sub * conn.kernel ** 2
                ctr["wue.lut_build_adds"] += slices * cout * ho * sub * build_cost(wue_lut.bits)
            elif lut:
                ctr["fe.lut_reads"] += slices * flat_in * cout
                ctr["fe.adds"] += slices * cout * max(flat_in - 1, 0)
                ctr["wue.lut_reads"] += slices * flat_in * cout
                ctr["wue.adds"] += slices * flat_in * cout
            else:
                ctr["fe.macs"] += slices * dense_macs(conn)
                ctr["wue.macs"] += slices * dense_macs(conn)
                ctr["fe.pool_ops"] += slices * pool_ops(conn)
                ctr["wue.pool_ops"] += slices * pool_ops(conn)
            ctr["fe.soma_ops"] += rec.u[0, 0].size * slices
            ctr["be.grad_ops"] += 2 * rec.u[0, 0].size * slices
            if conn.kind is LayerKind.CONV:
                ctr["be.decompressed"] += int(np.sum(rec.spike_mask))
            if j + 1 < len(plan):
                up = plan[j + 1].connection
                upper_mask = record.layers[j + 1].grad_mask
                if up.kind is LayerKind.FC:
                    ctr["be.dense_macs"] += slices * int(np.prod(up.weight_shape))
                else:
                    for i in range(n):
                        for s in range(t):
                            om = pool_or(rec.spike_mask[i, s], up.pools)
                            ctr["be.macs"] += count_tasks(om, upper_mask[i, s], up.kernel, up.stride, up.pad)
                            ctr["be.finder_scan_bits"] += om.size
                            ctr["be.tags"] += int(om.sum()) * upper_mask.shape[2]
                if up.pools:
                    ctr["be.pool_ops"] += slices * pool_ops(up)
    for ctr, layer in zip(counters, plan):
        ctr["wue.apply_ops"] += int(np.prod(layer.connection.weight_shape))
    return [Counter({k: v for k, v in c.items() if v}) for c in counters]
