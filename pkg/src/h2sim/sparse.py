"""Dual-sparsity backward processing.

The backward spatial term is a transposed convolution.  For an output
position of layer ``l`` (a neuron whose potential fell inside the surrogate
window) the contributing inputs are the positions of ``grad_u`` of layer
``l + 1`` under the 180-degree rotated kernel.  Only the intersection of
the output mask and each window's input mask becomes work.

Tag bit ``i`` of a window is the row-major window position ``(dy, dx)``;
window position ``(dy, dx)`` uses kernel offset ``(k-1-dy, k-1-dx)``.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

import numpy as np

from .core import conv_backward_input, grad_math
from .errors import ConfigurationError, CorruptedStateError
from .lut import CompressedPotentialTile
from .tensors import LifParams

SCAN_WIDTH = 16


@dataclass
class OutputIdBuffer:
    index: int
    ids: List[Tuple[int, int]] = field(default_factory=list)

    def __len__(self):
        return len(self.ids)


@dataclass(frozen=True)
class ConvTask:
    out_id: Tuple[int, int]
    w_id: Tuple[int, int]
    in_id: Tuple[int, int]


def effectual_output_finder(mask, cu: CompressedPotentialTile):
    """Scan ``mask`` row-major, dealing set positions to two buffers in turn.

    Returns ``((buf0, buf1), u_dense)``.
    """
    mask = np.asarray(mask).astype(bool)
    if mask.shape != cu.mask.shape or not np.array_equal(mask, cu.mask):
        raise CorruptedStateError("output mask does not match the compressed potential tile")
    if int(mask.sum()) != cu.values.size:
        raise CorruptedStateError(f"mask has {int(mask.sum())} set bits but {cu.values.size} values are stored")
    bufs = (OutputIdBuffer(0), OutputIdBuffer(1))
    for i, (y, x) in enumerate(zip(*np.nonzero(mask))):
        bufs[i % 2].ids.append((int(y), int(x)))
    return bufs, cu.decompress()


def window_positions(out_id, k, stride, pad, in_hw):
    """Yield ``(tag_bit, w_id, in_id)`` for every window position of ``out_id``.

    Positions that fall off the map, or between strided samples, yield
    ``in_id = None``.
    """
    y, x = out_id
    ho, wo = in_hw
    for dy in range(k):
        for dx in range(k):
            p, q = k - 1 - dy, k - 1 - dx
            ny, nx = y + pad - p, x + pad - q
            ok = ny % stride == 0 and nx % stride == 0
            oy, ox = ny // stride, nx // stride
            ok = ok and 0 <= oy < ho and 0 <= ox < wo
            yield dy * k + dx, (p, q), ((oy, ox) if ok else None)


def window_tag(out_id, in_mask, k, stride=1, pad=None) -> int:
    in_mask = np.asarray(in_mask).astype(bool)
    pad = k // 2 if pad is None else pad
    tag = 0
    for bit, _, in_id in window_positions(out_id, k, stride, pad, in_mask.shape):
        if in_id is not None and in_mask[in_id]:
            tag |= 1 << bit
    return tag


def effectual_io_finder(out_id, in_mask, k, stride=1, pad=None) -> Iterator[ConvTask]:
    """Emit one task per set tag bit, lowest bit first (priority encoder order)."""
    in_mask = np.asarray(in_mask).astype(bool)
    pad = k // 2 if pad is None else pad
    positions = list(window_positions(out_id, k, stride, pad, in_mask.shape))
    tag = window_tag(out_id, in_mask, k, stride, pad)
    while tag:
        bit = (tag & -tag).bit_length() - 1
        _, w_id, in_id = positions[bit]
        yield ConvTask(tuple(out_id), w_id, in_id)
        tag &= tag - 1


def sparse_conv_execute(tasks, w, grad_u, out_hw, counter: Optional[Counter] = None):
    """Accumulate ``w[w_id] * grad_u[in_id]`` into ``ps[out_id]``.

    ``tasks`` is an iterable of ``ConvTask``; ``w`` is a ``(k, k)`` kernel
    slice for one channel pair and ``grad_u`` the matching input map.
    """
    w = np.asarray(w)
    grad_u = np.asarray(grad_u)
    ps = np.zeros(out_hw, dtype=np.result_type(w.dtype, grad_u.dtype))
    n = 0
    for task in tasks:
        ps[task.out_id] += w[task.w_id] * grad_u[task.in_id]
        n += 1
    if counter is not None:
        counter["be.macs"] += n
    return ps


def grad_unit(ps, u_dense, grad_u_next, s_t, mask, p: LifParams, dtype=np.float32,
              counter: Optional[Counter] = None):
    """Two-phase gradient update; returns ``(grad_u, pot_grad_mask)``.

    ``mask`` is the spike-gradient mask the decompressed ``u_dense`` came
    with; it replaces the window test since ``u_dense`` is zero outside it.
    """
    shapes = {np.shape(ps), np.shape(u_dense), np.shape(s_t), np.shape(mask)}
    if grad_u_next is not None:
        shapes.add(np.shape(grad_u_next))
    if len(shapes) != 1:
        raise ConfigurationError(f"grad unit operands have mismatched shapes {sorted(shapes)}")
    if grad_u_next is None:
        grad_u_next = np.zeros(np.shape(ps), dtype=dtype)
    _, grad_u = grad_math(ps, grad_u_next, u_dense, s_t, p, valid=np.asarray(mask, dtype=bool), dtype=dtype)
    if counter is not None:
        counter["be.grad_ops"] += 2 * grad_u.size
    return grad_u, grad_u != 0


def fc_backward_mode(grad_u_upper, w, counter: Optional[Counter] = None):
    """Dense ``grad_u_upper @ w.T``; finders are bypassed for FC layers."""
    g = np.asarray(grad_u_upper)
    w = np.asarray(w)
    if g.shape[-1] != w.shape[1]:
        raise ConfigurationError(f"{g.shape[-1]} gradients for {w.shape[1]} weight columns")
    if counter is not None:
        counter["be.dense_macs"] += int(np.prod(g.shape[:-1])) * w.size
    return g @ w.T


# --------------------------------------------------------------------------
# whole-layer forms
# --------------------------------------------------------------------------

def window_counts(in_mask, k, stride, pad, out_hw) -> np.ndarray:
    """Per output position, how many set ``in_mask`` bits its window holds.

    ``in_mask`` is ``(..., Ho, Wo)``; the result is ``(..., H, W)``.
    """
    m = np.asarray(in_mask, dtype=np.int64)
    lead = m.shape[:-2]
    flat = m.reshape(-1, 1, *m.shape[-2:])
    ones = np.ones((k, k, 1, 1), dtype=np.int64)
    counts = conv_backward_input(flat, ones, out_hw, stride, pad, dtype=np.int64)
    return counts.reshape(*lead, *out_hw)


def count_tasks(out_mask, in_mask, k, stride=1, pad=None) -> int:
    """Total tasks for all channel pairs: ``sum over outputs of popcount(window)``.

    ``out_mask`` is ``(Cl, H, W)`` and ``in_mask`` ``(Cu, Ho, Wo)`` (leading
    batch axes are allowed as long as they match).
    """
    out_mask = np.asarray(out_mask, dtype=bool)
    pad = k // 2 if pad is None else pad
    counts = window_counts(in_mask, k, stride, pad, out_mask.shape[-2:])
    per_pos = counts.sum(axis=-3)  # summed over upper channels
    return int((out_mask.sum(axis=-3) * per_pos).sum())


def generate_tasks(out_mask, in_mask, k, stride=1, pad=None):
    """Vectorized task list for one sample: arrays in finder emission order.

    Returns a dict of int arrays ``ci, y, x, co, p, q, oy, ox, buf``.  Order
    is by output channel, then by finder buffer (0 before 1), then by output
    position, then by upper channel and tag bit.
    """
    out_mask = np.asarray(out_mask, dtype=bool)
    in_mask = np.asarray(in_mask, dtype=bool)
    pad = k // 2 if pad is None else pad
    ho, wo = in_mask.shape[-2:]
    ci, y, x = np.nonzero(out_mask)
    # alternation index within each channel's row-major scan
    start = np.searchsorted(ci, ci, side="left")
    buf = (np.arange(ci.size) - start) % 2
    cols = {key: [] for key in ("ci", "y", "x", "co", "p", "q", "oy", "ox", "buf", "bit")}
    for dy in range(k):
        for dx in range(k):
            pk, qk = k - 1 - dy, k - 1 - dx
            ny, nx = y + pad - pk, x + pad - qk
            ok = (ny % stride == 0) & (nx % stride == 0)
            oy, ox = ny // stride, nx // stride
            ok &= (oy >= 0) & (oy < ho) & (ox >= 0) & (ox < wo)
            idx = np.nonzero(ok)[0]
            if idx.size == 0:
                continue
            hits = in_mask[:, oy[idx], ox[idx]]  # (Cu, n)
            co, j = np.nonzero(hits)
            sel = idx[j]
            for key, val in (("ci", ci[sel]), ("y", y[sel]), ("x", x[sel]), ("co", co),
                             ("oy", oy[sel]), ("ox", ox[sel]), ("buf", buf[sel])):
                cols[key].append(val)
            cols["p"].append(np.full(sel.size, pk))
            cols["q"].append(np.full(sel.size, qk))
            cols["bit"].append(np.full(sel.size, dy * k + dx))
    tasks = {key: (np.concatenate(v) if v else np.zeros(0, dtype=np.int64)) for key, v in cols.items()}
    if tasks["ci"].size:
        pos = tasks["y"] * out_mask.shape[-1] + tasks["x"]
        order = np.lexsort((tasks["bit"], tasks["co"], pos, tasks["buf"], tasks["ci"]))
        tasks = {key: val[order] for key, val in tasks.items()}
    return tasks


def execute_tasks(tasks, w, grad_u, out_shape, dtype=np.float32, counter: Optional[Counter] = None):
    """Vectorized ``sparse_conv_execute`` over all channel pairs of one sample."""
    ps = np.zeros(out_shape, dtype=dtype)
    if tasks["ci"].size:
        prod = (np.asarray(w, dtype=dtype)[tasks["p"], tasks["q"], tasks["ci"], tasks["co"]]
                * np.asarray(grad_u, dtype=dtype)[tasks["co"], tasks["oy"], tasks["ox"]])
        np.add.at(ps, (tasks["ci"], tasks["y"], tasks["x"]), prod)
    if counter is not None:
        counter["be.macs"] += int(tasks["ci"].size)
    return ps


def finder_scan_bits(out_mask) -> int:
    """Mask bits one Effectual O Finder pass reads."""
    return int(np.asarray(out_mask).size)
