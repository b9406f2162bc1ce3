"""One training step executed through the engine-level functional models.

Forward Engine work goes through sub-LUT convolution and the Soma unit,
Backward Engine work through the effectual finders, sparse MAC execution
and the Grad unit, Weight Update Engine work through LUT weight-gradient
convolution.  Layers whose weight operand is not binary (the encoding
layer, or inputs that pass through average pooling) take a dense MAC path.

Every unit adds to a per-layer ``Counter``; ``cycles.replay_counters``
derives the same counts in closed form from recorded tensors.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .core import (
    FP32,
    Connection,
    LayerRecord,
    SubBatchRecord,
    WeightLayer,
    check_step_inputs,
    output_spike_gradient,
)
from .errors import CorruptedStateError
from .lut import (
    FE_LUT,
    WUE_LUT,
    CompressedPotentialTile,
    PartialSum,
    build_forward_tables,
    fc_lut_mode,
    fc_lut_outer,
    lut_conv_forward,
    lut_conv_weightgrad,
    soma,
)
from .sparse import execute_tasks, fc_backward_mode, finder_scan_bits, generate_tasks, grad_unit
from .tensors import LayerKind, NetworkSpec


def uses_lut(layer: WeightLayer) -> bool:
    return layer.connection.binary_operand and not layer.spec.is_encoding


def dense_macs(conn: Connection) -> int:
    """MACs of one dense spatial evaluation, padding taps included."""
    c, h, w = conn.pooled_shape
    if conn.kind is LayerKind.FC:
        return c * h * w * conn.out_channels
    co, ho, wo = conn.out_shape
    return co * ho * wo * c * conn.kernel ** 2


def pool_ops(conn: Connection) -> int:
    c, h, w = conn.in_shape
    ops = 0
    for size in conn.pools:
        ops += c * h * w
        h, w = -(-h // size), -(-w // size)
    return ops


def pool_or(mask, pools):
    """Pooled-grid mask: a block is live when any member is."""
    m = np.asarray(mask, dtype=bool)
    for size in pools:
        c, h, w = m.shape
        ho, wo = -(-h // size), -(-w // size)
        padded = np.zeros((c, ho * size, wo * size), dtype=bool)
        padded[:, :h, :w] = m
        m = padded.reshape(c, ho, size, wo, size).any(axis=(2, 4))
    return m


@dataclass
class EngineResult:
    weights: List[np.ndarray]
    loss: float
    grads: List[np.ndarray]
    records: List[SubBatchRecord] = field(default_factory=list)
    counters: List[Counter] = field(default_factory=list)

    @property
    def total_counts(self) -> Counter:
        total = Counter()
        for c in self.counters:
            total.update(c)
        return total


def _forward_layer(layer: WeightLayer, x, w, p, dtype, fe_rows, ctr):
    conn = layer.connection
    n, t_steps = x.shape[:2]
    out_shape = conn.out_shape
    u_all = np.zeros((n, t_steps, *out_shape), dtype=dtype)
    s_all = np.zeros((n, t_steps, *out_shape), dtype=bool)
    m_all = np.zeros_like(s_all)
    stored = [[None] * t_steps for _ in range(n)]
    lut = uses_lut(layer)
    is_conv = conn.kind is LayerKind.CONV
    cin = conn.pooled_shape[0]
    tables = build_forward_tables(w, FE_LUT, ctr) if (lut and is_conv) else None
    for i in range(n):
        state = None
        for t in range(t_steps):
            xt = x[i, t]
            if lut and is_conv:
                ps = None
                for lo in range(0, cin, fe_rows):
                    blk = slice(lo, min(lo + fe_rows, cin))
                    part = lut_conv_forward(xt[blk], w[:, :, blk], FE_LUT, conn.stride, conn.pad,
                                            total_channels=cin,
                                            tables=[(a, b, c, tb[blk]) for a, b, c, tb in tables],
                                            counter=ctr)
                    if ps is None:
                        ps = part
                    else:
                        ps = ps + part
                        ctr["fe.adds"] += part.values.size
            elif lut:
                vals = fc_lut_mode(xt.reshape(-1), w, ctr, engine="fe")
                ps = PartialSum(vals.reshape(out_shape), cin, cin)
            else:
                vals = conn.forward(xt[None], w, dtype)[0]
                ctr["fe.macs"] += dense_macs(conn)
                ctr["fe.pool_ops"] += pool_ops(conn)
                ps = PartialSum(vals.astype(dtype, copy=False), cin, cin)
            u_prev, s_prev = state if state is not None else (None, None)
            s, kept, mask, u = soma(ps, u_prev, s_prev, p, compress=is_conv, counter=ctr)
            u_all[i, t], s_all[i, t], m_all[i, t] = u, s, mask
            stored[i][t] = kept
            state = (u, s)
    return LayerRecord(inputs=x, u=u_all, s=s_all, spike_mask=m_all), stored


def _spatial_gradient(upper: WeightLayer, w_up, grad_u_up, grad_mask_up, spike_mask, dtype, ctr):
    """Backward Engine spatial term for the neuron layer below ``upper``."""
    conn = upper.connection
    pooled = conn.pooled_shape
    if conn.kind is LayerKind.FC:
        ps = fc_backward_mode(grad_u_up.reshape(-1).astype(dtype), np.asarray(w_up, dtype=dtype), ctr)
        ps = ps.reshape(pooled)
    else:
        out_mask = pool_or(spike_mask, conn.pools)
        tasks = generate_tasks(out_mask, grad_mask_up, conn.kernel, conn.stride, conn.pad)
        ctr["be.finder_scan_bits"] += finder_scan_bits(out_mask)
        ctr["be.tags"] += int(out_mask.sum()) * grad_mask_up.shape[0]
        ps = execute_tasks(tasks, w_up, grad_u_up, pooled, dtype, ctr)
    if conn.pools:
        ctr["be.pool_ops"] += pool_ops(conn)
        ps = conn.unpool(ps[None])[0]
    return ps.astype(dtype, copy=False)


def _decompress(kept, mask, ctr):
    if isinstance(kept, CompressedPotentialTile):
        if not np.array_equal(kept.mask, mask):
            raise CorruptedStateError("stored potentials were compressed under a different mask")
        ctr["be.decompressed"] += kept.values.size
        return kept.decompress()
    return kept


def _weight_gradient(layer: WeightLayer, x, grad_u, dtype, ctr):
    conn = layer.connection
    dw = np.zeros(conn.weight_shape, dtype=dtype)
    n, t_steps = x.shape[:2]
    lut = uses_lut(layer)
    for i in range(n):
        for t in range(t_steps):
            if lut and conn.kind is LayerKind.CONV:
                dw += lut_conv_weightgrad(x[i, t], grad_u[i, t], conn.kernel, WUE_LUT, conn.stride,
                                          conn.pad, counter=ctr)
            elif lut:
                dw += fc_lut_outer(x[i, t].reshape(1, -1), grad_u[i, t].reshape(1, -1), ctr)
            else:
                dw += conn.weight_grad(x[i, t][None], grad_u[i, t][None], dtype)
                ctr["wue.macs"] += dense_macs(conn)
                ctr["wue.pool_ops"] += pool_ops(conn)
    return dw


def engine_train_step(net: NetworkSpec, batch, labels, weights, lr=0.1, dtype=FP32,
                      fe_rows: int = 64, keep_records=True) -> EngineResult:
    """Engine-level counterpart of ``core.train_step`` with op counters."""
    x_all, labels, plan = check_step_inputs(net, batch, labels, weights)
    p = net.lif
    weights = [np.asarray(w, dtype=dtype) for w in weights]
    counters = [Counter() for _ in plan]
    grads = [np.zeros(layer.connection.weight_shape, dtype=dtype) for layer in plan]
    total_loss = 0.0
    records = []
    for b in range(net.batch_group):
        sl = slice(b * net.sub_batch, (b + 1) * net.sub_batch)
        x = x_all[sl]
        layer_records, stored = [], []
        for layer, w, ctr in zip(plan, weights, counters):
            rec, kept = _forward_layer(layer, x, w, p, dtype, fe_rows, ctr)
            layer_records.append(rec)
            stored.append(kept)
            x = rec.s

        loss, grad_s_out = output_spike_gradient(layer_records[-1].s, labels[sl])
        for j in reversed(range(len(plan))):
            rec, ctr = layer_records[j], counters[j]
            n, t_steps = rec.u.shape[:2]
            grad_u = np.zeros_like(rec.u, dtype=dtype)
            for i in range(n):
                grad_next = None
                for t in reversed(range(t_steps)):
                    if j == len(plan) - 1:
                        ps = grad_s_out[i, t].reshape(rec.u.shape[2:]).astype(dtype)
                    else:
                        up = layer_records[j + 1]
                        ps = _spatial_gradient(plan[j + 1], weights[j + 1], up.grad_u[i, t],
                                               up.grad_mask[i, t], rec.spike_mask[i, t], dtype, ctr)
                    u_dense = _decompress(stored[j][i][t], rec.spike_mask[i, t], ctr)
                    gu, _ = grad_unit(ps, u_dense, grad_next, rec.s[i, t], rec.spike_mask[i, t], p,
                                      dtype, ctr)
                    grad_u[i, t] = gu
                    grad_next = gu
            rec.grad_u = grad_u
            rec.grad_mask = grad_u != 0
            rec.grad_w = _weight_gradient(plan[j], rec.inputs, grad_u, dtype, ctr)
            grads[j] += rec.grad_w
        total_loss += loss
        if keep_records:
            records.append(SubBatchRecord(layer_records, labels[sl], loss))

    new_weights = []
    for w, g, ctr in zip(weights, grads, counters):
        new_weights.append((w - dtype(lr) * (g / dtype(net.batch_size))).astype(dtype))
        ctr["wue.apply_ops"] += w.size
    return EngineResult(new_weights, total_loss / net.batch_size, grads, records, counters)
