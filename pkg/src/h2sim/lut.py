"""LUT-based processing of the Forward and Weight Update engines.

A sub-LUT stores every subset sum of ``m`` operand values so a binary spike
pattern of ``m`` bits selects a precomputed partial dot product.  Address
bit ``i`` corresponds to element ``i`` of the covered sub-window in
row-major order (LSB first).  Window positions that fall outside the map
read as 0, which is the zero-padding convention of the golden model.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np

from .core import _window_slice, grad_math, spike_grad_mask
from .errors import ConfigurationError, CorruptedStateError, SequencingError
from .tensors import LifParams, conv_out_size

MAX_SUBLUT_BITS = 8


def subset_sums(values: np.ndarray) -> np.ndarray:
    """Subset-sum tables along the last axis: ``(..., m) -> (..., 2**m)``.

    Built incrementally, one addition per entry that has two or more bits
    set (``2**m - m - 1`` additions per table).
    """
    values = np.asarray(values)
    m = values.shape[-1]
    table = np.zeros(values.shape[:-1] + (1 << m,), dtype=values.dtype)
    for bit in range(m):
        lo = 1 << bit
        table[..., lo:2 * lo] = table[..., :lo] + values[..., bit, None]
    return table


def build_cost(m: int) -> int:
    return (1 << m) - m - 1


@dataclass(frozen=True)
class SubLut:
    m: int
    entries: np.ndarray
    layout: tuple = ()

    def __post_init__(self):
        self.entries.setflags(write=False)

    def lookup(self, address: int) -> float:
        return self.entries[address]


def build_sublut(values, layout=()) -> SubLut:
    values = np.asarray(values)
    if values.ndim != 1:
        raise ConfigurationError("a sub-LUT covers a flat list of values")
    m = values.shape[0]
    if m > MAX_SUBLUT_BITS:
        raise ConfigurationError(f"sub-LUT over {m} elements exceeds the {MAX_SUBLUT_BITS}-bit limit")
    return SubLut(m, subset_sums(values), tuple(layout))


@dataclass(frozen=True)
class LutPeConfig:
    subluts_per_pe: int = 3
    sublut_entries: int = 8
    window: Tuple[int, int] = (3, 3)
    bytes_per_entry: int = 2

    def __post_init__(self):
        if self.sublut_entries < 2 or self.sublut_entries & (self.sublut_entries - 1):
            raise ConfigurationError("sub-LUT entry count must be a power of two")
        if self.subluts_per_pe * self.bits != self.window[0] * self.window[1]:
            raise ConfigurationError(
                f"{self.subluts_per_pe} sub-LUTs of {self.bits} bits do not tile a {self.window} window")

    @property
    def bits(self) -> int:
        return int(math.log2(self.sublut_entries))

    @property
    def bytes_per_sublut(self) -> int:
        return self.sublut_entries * self.bytes_per_entry

    @property
    def bytes_per_pe(self) -> int:
        return self.subluts_per_pe * self.bytes_per_sublut


FE_LUT = LutPeConfig(3, 8, (3, 3))
WUE_LUT = LutPeConfig(2, 16, (1, 8))


def kernel_segments(k: int, bits: int) -> List[Tuple[int, int, int]]:
    """Split a ``k x k`` kernel into row segments ``(row, col0, length)`` of at most ``bits`` taps."""
    segs = []
    for p in range(k):
        q = 0
        while q < k:
            length = min(bits, k - q)
            segs.append((p, q, length))
            q += length
    return segs


def logical_pes(k: int, cfg: LutPeConfig) -> int:
    return -(-len(kernel_segments(k, cfg.bits)) // cfg.subluts_per_pe)


@dataclass
class PartialSum:
    """Spatial partial sums of a tile with the input-channel coverage tracked."""

    values: np.ndarray
    channels: int
    total_channels: int

    def __add__(self, other: "PartialSum") -> "PartialSum":
        if other.total_channels != self.total_channels:
            raise SequencingError("partial sums belong to different layers")
        return PartialSum(self.values + other.values, self.channels + other.channels, self.total_channels)

    @property
    def complete(self) -> bool:
        return self.channels == self.total_channels


def _bits_at(spikes_padded, p, q, stride, ho, wo):
    return spikes_padded[:, _window_slice(p, stride, ho), _window_slice(q, stride, wo)]


def build_forward_tables(w_kernel, cfg: LutPeConfig = FE_LUT, counter: Optional[Counter] = None):
    """Sub-LUTs for every kernel row segment: ``[(row, col0, length, table)]``.

    ``table`` is ``(Cin, Cout, 2**length)``; built once per weight load.
    """
    w = np.asarray(w_kernel)
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ConfigurationError(f"expected a (k, k, Cin, Cout) kernel, got {w.shape}")
    k, _, cin, cout = w.shape
    tables = []
    for p, q0, length in kernel_segments(k, cfg.bits):
        tables.append((p, q0, length, subset_sums(np.moveaxis(w[p, q0:q0 + length], 0, -1))))
        if counter is not None:
            counter["fe.lut_build_adds"] += cin * cout * build_cost(length)
    return tables


def lut_conv_forward(spikes, w_kernel, cfg: LutPeConfig = FE_LUT, stride=1, pad=None,
                     total_channels=None, tables=None, counter: Optional[Counter] = None) -> PartialSum:
    """LUT convolution of binary ``spikes`` (Cin,H,W) with ``w_kernel`` (k,k,Cin,Cout).

    Each (cin, cout) pair holds one sub-LUT per kernel row segment; the
    segment's spike bits address it and the looked-up values are summed
    over segments and input channels.  Pass ``tables`` from
    ``build_forward_tables`` to reuse sub-LUTs across calls.
    """
    spikes = np.asarray(spikes).astype(bool)
    w = np.asarray(w_kernel)
    if w.ndim != 4 or w.shape[0] != w.shape[1]:
        raise ConfigurationError(f"expected a (k, k, Cin, Cout) kernel, got {w.shape}")
    k, _, cin, cout = w.shape
    if spikes.shape[0] != cin:
        raise ConfigurationError(f"kernel has {cin} input channels, tile has {spikes.shape[0]}")
    if tables is None:
        tables = build_forward_tables(w, cfg, counter)
    pad = k // 2 if pad is None else pad
    h, wd = spikes.shape[1:]
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    sp = np.pad(spikes, ((0, 0), (pad, pad), (pad, pad)))
    out = np.zeros((cout, ho, wo), dtype=w.dtype)
    ci_idx = np.arange(cin)[:, None, None, None]
    co_idx = np.arange(cout)[None, :, None, None]
    for p, q0, length, table in tables:
        addr = np.zeros((cin, ho, wo), dtype=np.int64)
        for i in range(length):
            addr |= _bits_at(sp, p, q0 + i, stride, ho, wo).astype(np.int64) << i
        looked = table[ci_idx, co_idx, addr[:, None]]  # (cin, cout, ho, wo)
        out += looked.sum(axis=0)
    if counter is not None:
        counter["fe.lut_reads"] += cin * cout * ho * wo * len(tables)
        counter["fe.adds"] += cout * ho * wo * (cin * len(tables) - 1)
    return PartialSum(out, cin, cin if total_channels is None else total_channels)


def lut_conv_weightgrad(spikes, grad_u, k, cfg: LutPeConfig = WUE_LUT, stride=1, pad=None,
                        counter: Optional[Counter] = None) -> np.ndarray:
    """LUT form of the weight-gradient convolution for one sample and timestep.

    ``spikes`` (Cin,H,W) binary, ``grad_u`` (Cout,Ho,Wo).  Sub-LUTs are
    built from ``1 x bits`` segments of each ``grad_u`` row and reused for
    all ``k*k`` kernel offsets and every input channel.  Returns the
    ``(k, k, Cin, Cout)`` contribution.
    """
    spikes = np.asarray(spikes).astype(bool)
    g = np.asarray(grad_u)
    cin, h, wd = spikes.shape
    cout, ho, wo = g.shape
    pad = k // 2 if pad is None else pad
    if (conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)) != (ho, wo):
        raise ConfigurationError("gradient map does not match the convolution geometry")
    seg = cfg.bits
    nseg = -(-wo // seg)
    gpad = np.zeros((cout, ho, nseg * seg), dtype=g.dtype)
    gpad[:, :, :wo] = g
    tables = subset_sums(gpad.reshape(cout, ho, nseg, seg))  # (cout, ho, nseg, 2**seg)
    # Spike map padded generously so segment positions past the edge read 0.
    extra = nseg * seg * stride + k
    sp = np.zeros((cin, h + 2 * pad + stride * ho + k, wd + 2 * pad + extra), dtype=bool)
    sp[:, pad:pad + h, pad:pad + wd] = spikes
    dw = np.zeros((k, k, cin, cout), dtype=g.dtype)
    co_idx = np.arange(cout)[None, :, None, None]
    y_idx = np.arange(ho)[None, None, :, None]
    s_idx = np.arange(nseg)[None, None, None, :]
    for p in range(k):
        rows = sp[:, _window_slice(p, stride, ho)]  # (cin, ho, width)
        for q in range(k):
            cols = rows[:, :, _window_slice(q, stride, nseg * seg)]  # (cin, ho, nseg*seg)
            bits = cols.reshape(cin, ho, nseg, seg).astype(np.int64)
            addr = (bits << np.arange(seg)).sum(axis=-1)  # (cin, ho, nseg)
            looked = tables[co_idx, y_idx, s_idx, addr[:, None]]  # (cin, cout, ho, nseg)
            dw[p, q] = looked.sum(axis=(2, 3))
    if counter is not None:
        reads = cin * cout * ho * nseg * k * k
        counter["wue.lut_reads"] += reads
        counter["wue.adds"] += reads
        counter["wue.lut_build_adds"] += cout * ho * nseg * build_cost(seg)
    return dw


def fc_lut_mode(spikes, values, counter: Optional[Counter] = None, engine="fe") -> np.ndarray:
    """Sub-LUTs as plain buffers: export ``values[i]`` when ``spikes[i]`` is set.

    ``spikes`` is ``(..., Cin)`` and ``values`` ``(Cin, Cout)``; returns
    ``(..., Cout)``.
    """
    s = np.asarray(spikes).astype(bool)
    v = np.asarray(values)
    if s.shape[-1] != v.shape[0]:
        raise ConfigurationError(f"{s.shape[-1]} spikes for {v.shape[0]} value rows")
    exported = np.where(s[..., :, None], v, 0)
    if counter is not None:
        counter[f"{engine}.lut_reads"] += int(np.prod(exported.shape))
        counter[f"{engine}.adds"] += int(np.prod(s.shape[:-1])) * v.shape[1] * max(v.shape[0] - 1, 0)
    return exported.sum(axis=-2)


def fc_lut_outer(spikes, grad_u, counter: Optional[Counter] = None) -> np.ndarray:
    """FC weight gradient: row ``i`` receives ``grad_u`` whenever spike ``i`` fired."""
    s = np.asarray(spikes).astype(bool)
    g = np.asarray(grad_u)
    exported = np.where(s[:, :, None], g[:, None, :], 0)
    if counter is not None:
        counter["wue.lut_reads"] += int(np.prod(exported.shape))
        counter["wue.adds"] += int(np.prod(exported.shape))
    return exported.sum(axis=0)


# --------------------------------------------------------------------------
# Soma
# --------------------------------------------------------------------------

@dataclass
class CompressedPotentialTile:
    """Potentials kept only where the spike-gradient mask is set (row-major)."""

    mask: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.mask = np.asarray(self.mask).astype(bool)
        self.values = np.asarray(self.values)
        if self.values.shape != (int(self.mask.sum()),):
            raise CorruptedStateError(
                f"{self.values.shape[0]} stored values for {int(self.mask.sum())} mask bits")

    @classmethod
    def compress(cls, u, mask) -> "CompressedPotentialTile":
        mask = np.asarray(mask).astype(bool)
        return cls(mask, np.asarray(u)[mask])

    def decompress(self) -> np.ndarray:
        out = np.zeros(self.mask.shape, dtype=self.values.dtype if self.values.size else np.float32)
        out[self.mask] = self.values
        return out

    @property
    def nbytes(self) -> int:
        return 2 * self.values.size


def soma(ps: PartialSum, u_prev, s_prev, p: LifParams, compress=True,
         counter: Optional[Counter] = None):
    """Temporal update, firing and potential compression for a finished tile.

    Returns ``(s, stored_u, mask, u)``; ``stored_u`` is a
    ``CompressedPotentialTile`` for Conv layers and the dense potentials
    when ``compress`` is False (FC layers).
    """
    if not ps.complete:
        raise SequencingError(
            f"soma received partial sums over {ps.channels} of {ps.total_channels} input channels")
    dtype = ps.values.dtype.type
    spatial = ps.values
    if u_prev is None:
        u = spatial.copy()
    else:
        keep = (1 - np.asarray(s_prev, dtype=dtype)).astype(dtype)
        u = ((dtype(p.alpha) * np.asarray(u_prev, dtype=dtype)) * keep + spatial).astype(dtype)
    s = u >= dtype(p.th_f)
    mask = spike_grad_mask(u, p)
    if counter is not None:
        counter["fe.soma_ops"] += u.size
    stored = CompressedPotentialTile.compress(u, mask) if compress else u
    return s, stored, mask, u
