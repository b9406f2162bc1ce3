"""Independent reference for the training step: an explicitly unrolled graph.

The network is unrolled over every timestep into a tape of elementary
nodes and differentiated with plain reverse-mode accumulation.  Layer
connectivity is enumerated index by index into incidence lists, so nothing
here shares code with the tensor-shaped convolution routines in
``h2sim.core``.  The only hand-written derivative is the surrogate for the
firing step; the BPTT recurrences fall out of the chain rule.

Values are float64 and shaped ``(N, features)`` with features flattened in
``(C, H, W)`` order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from .tensors import LayerKind, LifParams, NetworkSpec, pooled_size


class Tape:
    def __init__(self):
        self.nodes: List["Node"] = []

    def backward(self, root: "Node"):
        root.grad = np.ones_like(root.value)
        for node in reversed(self.nodes):
            if node.grad is not None and node.backward_fn is not None:
                node.backward_fn(node.grad)


class Node:
    def __init__(self, tape: Tape, value, backward_fn: Optional[Callable] = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.backward_fn = backward_fn
        tape.nodes.append(self)

    def accumulate(self, g):
        self.grad = g.copy() if self.grad is None else self.grad + g


def const(tape, value):
    return Node(tape, value)


def add(tape, a, b):
    out = Node(tape, a.value + b.value)

    def back(g):
        a.accumulate(g)
        b.accumulate(g)
    out.backward_fn = back
    return out


def mul(tape, a, b):
    out = Node(tape, a.value * b.value)

    def back(g):
        a.accumulate(g * b.value)
        b.accumulate(g * a.value)
    out.backward_fn = back
    return out


def scale(tape, a, c):
    out = Node(tape, a.value * c)
    out.backward_fn = lambda g: a.accumulate(g * c)
    return out


def one_minus(tape, a):
    out = Node(tape, 1.0 - a.value)
    out.backward_fn = lambda g: a.accumulate(-g)
    return out


def linear(tape, x, w, incidence, n_out):
    """``out[n, o] = sum over (i, k, o) in incidence of x[n, i] * w[k]``."""
    src, widx, dst = incidence
    n = x.value.shape[0]
    terms = x.value[:, src] * w.value[widx]
    val = np.zeros((n, n_out))
    for row in range(n):
        val[row] = np.bincount(dst, weights=terms[row], minlength=n_out)
    out = Node(tape, val)

    def back(g):
        gx = np.zeros_like(x.value)
        for row in range(n):
            gx[row] = np.bincount(src, weights=g[row, dst] * w.value[widx], minlength=x.value.shape[1])
        x.accumulate(gx)
        gw = np.bincount(widx, weights=(g[:, dst] * x.value[:, src]).sum(axis=0), minlength=w.value.size)
        w.accumulate(gw)
    out.backward_fn = back
    return out


def fire(tape, u, p: LifParams):
    out = Node(tape, (u.value >= p.th_f).astype(np.float64))

    def back(g):
        inside = (u.value > p.th_l) & (u.value < p.th_r)
        u.accumulate(g * np.where(inside, p.beta, 0.0))
    out.backward_fn = back
    return out


def total(tape, a):
    out = Node(tape, np.array([a.value.sum()]))
    out.backward_fn = lambda g: a.accumulate(np.full_like(a.value, g[0]))
    return out


# --------------------------------------------------------------------------
# connectivity enumeration
# --------------------------------------------------------------------------

def conv_incidence(in_shape, cout, k, stride, pad):
    cin, h, w = in_shape
    ho = (h + 2 * pad - k) // stride + 1
    wo = (w + 2 * pad - k) // stride + 1
    src, widx, dst = [], [], []
    for co in range(cout):
        for oy in range(ho):
            for ox in range(wo):
                o = (co * ho + oy) * wo + ox
                for ci in range(cin):
                    for p in range(k):
                        for q in range(k):
                            iy = oy * stride + p - pad
                            ix = ox * stride + q - pad
                            if 0 <= iy < h and 0 <= ix < w:
                                src.append((ci * h + iy) * w + ix)
                                widx.append(((p * k + q) * cin + ci) * cout + co)
                                dst.append(o)
    return (np.array(src, dtype=np.int64), np.array(widx, dtype=np.int64),
            np.array(dst, dtype=np.int64)), (cout, ho, wo)


def fc_incidence(n_in, n_out):
    src, widx, dst = [], [], []
    for i in range(n_in):
        for o in range(n_out):
            src.append(i)
            widx.append(i * n_out + o)
            dst.append(o)
    return (np.array(src), np.array(widx), np.array(dst)), (n_out, 1, 1)


def pool_incidence(in_shape, pool):
    c, h, w = in_shape
    ho, wo = pooled_size(h, pool), pooled_size(w, pool)
    src, dst = [], []
    for ch in range(c):
        for oy in range(ho):
            for ox in range(wo):
                for dy in range(pool):
                    for dx in range(pool):
                        iy, ix = oy * pool + dy, ox * pool + dx
                        if iy < h and ix < w:
                            src.append((ch * h + iy) * w + ix)
                            dst.append((ch * ho + oy) * wo + ox)
    src = np.array(src, dtype=np.int64)
    return (src, np.zeros_like(src), np.array(dst, dtype=np.int64)), (c, ho, wo)


# --------------------------------------------------------------------------
# unrolled training step
# --------------------------------------------------------------------------

@dataclass
class OracleResult:
    loss: float
    grads: List[np.ndarray]
    u: List[np.ndarray]        # per layer, (N, T, features)
    s: List[np.ndarray]
    grad_u: List[np.ndarray]


def unrolled_train_step(net: NetworkSpec, batch, labels, weights) -> OracleResult:
    """Loss, weight gradients and per-timestep potential gradients for one sub-batch."""
    p = net.lif
    T = net.timesteps
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim == 4:
        x = np.repeat(x[:, None], T, axis=1)
    n = x.shape[0]
    tape = Tape()

    shape = tuple(net.input_shape)
    inputs = [const(tape, x[:, t].reshape(n, -1)) for t in range(T)]
    w_nodes, u_nodes, s_nodes = [], [], []
    pending = []
    for spec in net.layers:
        if spec.kind is LayerKind.AVGPOOL:
            pending.append(spec.pool)
            continue
        pooled_inputs = inputs
        for pool in pending:
            inc, shape_p = pool_incidence(shape, pool)
            pw = const(tape, np.array([1.0 / (pool * pool)]))
            pooled_inputs = [linear(tape, xi, pw, inc, int(np.prod(shape_p))) for xi in pooled_inputs]
            shape = shape_p
        pending = []
        w_arr = np.asarray(weights[len(w_nodes)], dtype=np.float64)
        if spec.kind is LayerKind.FC:
            inc, out_shape = fc_incidence(int(np.prod(shape)), spec.out_channels)
        else:
            inc, out_shape = conv_incidence(shape, spec.out_channels, spec.kernel, spec.stride, spec.padding)
        w_node = const(tape, w_arr.ravel())
        w_nodes.append(w_node)
        n_out = int(np.prod(out_shape))
        us, ss = [], []
        for t in range(T):
            spatial = linear(tape, pooled_inputs[t], w_node, inc, n_out)
            if t == 0:
                u = spatial
            else:
                leak = scale(tape, us[-1], p.alpha)
                u = add(tape, mul(tape, leak, one_minus(tape, ss[-1])), spatial)
            us.append(u)
            ss.append(fire(tape, u, p))
        u_nodes.append(us)
        s_nodes.append(ss)
        inputs = ss
        shape = out_shape

    top = s_nodes[-1]
    rate = scale(tape, _sum_nodes(tape, top), 1.0 / T)
    target = np.zeros_like(rate.value)
    target[np.arange(n), np.asarray(labels)] = 1.0
    diff = add(tape, rate, const(tape, -target))
    loss = total(tape, mul(tape, diff, diff))
    tape.backward(loss)

    grads = []
    for w_node, w in zip(w_nodes, weights):
        g = w_node.grad if w_node.grad is not None else np.zeros_like(w_node.value)
        grads.append(g.reshape(np.shape(w)))
    stack = lambda nodes, attr: np.stack([
        (getattr(nd, attr) if getattr(nd, attr) is not None else np.zeros_like(nd.value))
        for nd in nodes], axis=1)
    return OracleResult(
        loss=float(loss.value[0]),
        grads=grads,
        u=[stack(us, "value") for us in u_nodes],
        s=[stack(ss, "value") for ss in s_nodes],
        grad_u=[stack(us, "grad") for us in u_nodes],
    )


def _sum_nodes(tape, nodes):
    acc = nodes[0]
    for nd in nodes[1:]:
        acc = add(tape, acc, nd)
    return acc
