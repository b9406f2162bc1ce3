"""Golden functional model of one BPTT training step for LIF spiking networks.

Everything the engine models and the cycle simulator produce is checked
against the tensors computed here.  Activations use the layout
``(N, C, H, W)`` per timestep and ``(N, T, C, H, W)`` across time; fully
connected layers keep ``H = W = 1``.  Conv weights are ``(k, k, Cin, Cout)``,
FC weights ``(Cin * H * W, Cout)``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import ConfigurationError, DataError
from .tensors import (
    LayerKind,
    LayerSpec,
    LifParams,
    NetworkSpec,
    conv_out_size,
    pooled_size,
)

log = logging.getLogger(__name__)

FP32 = np.float32
FP16 = np.float16


# --------------------------------------------------------------------------
# spatial primitives
# --------------------------------------------------------------------------

def _window_slice(start: int, stride: int, count: int) -> slice:
    return slice(start, start + stride * (count - 1) + 1, stride)


def conv_forward(x, w, stride=1, pad=0, dtype=FP32):
    """Cross-correlation of ``x`` (N,Cin,H,W) with ``w`` (k,k,Cin,Cout)."""
    k = w.shape[0]
    n, cin, h, wd = x.shape
    if w.shape[2] != cin:
        raise ConfigurationError(f"weights expect {w.shape[2]} input channels, got {cin}")
    ho, wo = conv_out_size(h, k, stride, pad), conv_out_size(wd, k, stride, pad)
    xp = np.pad(x.astype(dtype, copy=False), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    w = w.astype(dtype, copy=False)
    out = np.zeros((n, w.shape[3], ho, wo), dtype=dtype)
    for p in range(k):
        for q in range(k):
            patch = xp[:, :, _window_slice(p, stride, ho), _window_slice(q, stride, wo)]
            if dtype == FP16:
                for c in range(cin):
                    term = patch[:, c, None] * w[p, q, c][None, :, None, None]
                    out = out + term
            else:
                out += np.einsum("nchw,cd->ndhw", patch, w[p, q], optimize=True)
    return out


def conv_backward_input(g, w, in_hw, stride=1, pad=0, dtype=FP32):
    """Transposed convolution: gradient w.r.t. the input of ``conv_forward``."""
    k = w.shape[0]
    n, cout, ho, wo = g.shape
    h, wd = in_hw
    cin = w.shape[2]
    buf = np.zeros((n, cin, h + 2 * pad + stride, wd + 2 * pad + stride), dtype=dtype)
    g = g.astype(dtype, copy=False)
    w = w.astype(dtype, copy=False)
    for p in range(k):
        for q in range(k):
            view = (slice(None), slice(None), _window_slice(p, stride, ho), _window_slice(q, stride, wo))
            if dtype == FP16:
                for d in range(cout):
                    buf[view] = buf[view] + g[:, d, None] * w[p, q, :, d][None, :, None, None]
            else:
                buf[view] += np.einsum("ndhw,cd->nchw", g, w[p, q], optimize=True)
    return buf[:, :, pad:pad + h, pad:pad + wd]


def conv_weight_grad(x, g, k, stride=1, pad=0, dtype=FP32):
    n, cin, h, wd = x.shape
    _, cout, ho, wo = g.shape
    xp = np.pad(x.astype(dtype, copy=False), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    g = g.astype(dtype, copy=False)
    dw = np.zeros((k, k, cin, cout), dtype=dtype)
    for p in range(k):
        for q in range(k):
            patch = xp[:, :, _window_slice(p, stride, ho), _window_slice(q, stride, wo)]
            if dtype == FP16:
                acc = np.zeros((cin, cout), dtype=FP16)
                for i in range(n):
                    for yy in range(ho):
                        for xx in range(wo):
                            acc = acc + patch[i, :, yy, xx][:, None] * g[i, :, yy, xx][None, :]
                dw[p, q] = acc
            else:
                dw[p, q] = np.einsum("nchw,ndhw->cd", patch, g, optimize=True)
    return dw


def avg_pool_forward(x, pool=2):
    """Average ``pool x pool`` blocks over the last two axes (zero padded)."""
    *lead, h, w = x.shape
    ho, wo = pooled_size(h, pool), pooled_size(w, pool)
    xp = np.zeros((*lead, ho * pool, wo * pool), dtype=np.result_type(x.dtype, FP32))
    xp[..., :h, :w] = x
    blocks = xp.reshape(*lead, ho, pool, wo, pool)
    return blocks.sum(axis=(-3, -1)) / (pool * pool)


def avg_pool_backward(g, in_hw, pool=2):
    h, w = in_hw
    spread = np.repeat(np.repeat(g, pool, axis=-2), pool, axis=-1) / (pool * pool)
    return spread[..., :h, :w].astype(g.dtype, copy=False)


# --------------------------------------------------------------------------
# layer wiring
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Connection:
    """How one neuron layer (or the network input) feeds a weight layer.

    ``pools`` lists the average-pooling stages applied to the source map
    before the Conv/FC weights.
    """

    kind: LayerKind
    in_shape: tuple
    out_channels: int
    kernel: int = 1
    stride: int = 1
    pad: int = 0
    pools: tuple = ()

    def __post_init__(self):
        shape = tuple(int(v) for v in self.in_shape)
        if len(shape) == 1:
            shape = (shape[0], 1, 1)  # flat FC input
        if len(shape) != 3:
            raise ConfigurationError(f"layer input must be (C, H, W) or (C,), got {self.in_shape}")
        object.__setattr__(self, "in_shape", shape)

    @property
    def pooled_shape(self) -> tuple:
        c, h, w = self.in_shape
        for pool in self.pools:
            h, w = pooled_size(h, pool), pooled_size(w, pool)
        return (c, h, w)

    @property
    def out_shape(self) -> tuple:
        c, h, w = self.pooled_shape
        if self.kind is LayerKind.FC:
            return (self.out_channels, 1, 1)
        return (self.out_channels,
                conv_out_size(h, self.kernel, self.stride, self.pad),
                conv_out_size(w, self.kernel, self.stride, self.pad))

    @property
    def weight_shape(self) -> tuple:
        c, h, w = self.pooled_shape
        if self.kind is LayerKind.FC:
            return (c * h * w, self.out_channels)
        return (self.kernel, self.kernel, c, self.out_channels)

    @property
    def binary_operand(self) -> bool:
        """True when the weight operand multiplies raw spikes (LUT-eligible)."""
        return not self.pools

    def pool(self, x):
        for size in self.pools:
            x = avg_pool_forward(x, size)
        return x

    def unpool(self, g):
        shapes = [self.in_shape[1:]]
        h, w = self.in_shape[1:]
        for size in self.pools:
            h, w = pooled_size(h, size), pooled_size(w, size)
            shapes.append((h, w))
        for size, hw in zip(reversed(self.pools), reversed(shapes[:-1])):
            g = avg_pool_backward(g, hw, size)
        return g

    def forward(self, x, w, dtype=FP32):
        x = self.pool(x)
        if self.kind is LayerKind.FC:
            flat = x.reshape(x.shape[0], -1).astype(dtype, copy=False)
            if dtype == FP16:
                out = np.zeros((x.shape[0], w.shape[1]), dtype=FP16)
                for i in range(flat.shape[1]):
                    out = out + flat[:, i, None] * w[i].astype(FP16)[None, :]
            else:
                out = flat @ w.astype(dtype, copy=False)
            return out.reshape(x.shape[0], -1, 1, 1)
        return conv_forward(x, w, self.stride, self.pad, dtype)

    def backward_input(self, g, w, dtype=FP32):
        c, h, wd = self.pooled_shape
        if self.kind is LayerKind.FC:
            flat = g.reshape(g.shape[0], -1).astype(dtype, copy=False)
            if dtype == FP16:
                gx = np.zeros((g.shape[0], w.shape[0]), dtype=FP16)
                for j in range(flat.shape[1]):
                    gx = gx + flat[:, j, None] * w[:, j].astype(FP16)[None, :]
            else:
                gx = flat @ w.astype(dtype, copy=False).T
            gx = gx.reshape(g.shape[0], c, h, wd)
        else:
            gx = conv_backward_input(g, w, (h, wd), self.stride, self.pad, dtype)
        return self.unpool(gx).astype(dtype, copy=False)

    def weight_grad(self, x, g, dtype=FP32):
        x = self.pool(x)
        if self.kind is LayerKind.FC:
            flat = x.reshape(x.shape[0], -1).astype(dtype, copy=False)
            gf = g.reshape(g.shape[0], -1).astype(dtype, copy=False)
            if dtype == FP16:
                dw = np.zeros((flat.shape[1], gf.shape[1]), dtype=FP16)
                for i in range(flat.shape[0]):
                    dw = dw + flat[i][:, None] * gf[i][None, :]
                return dw
            return flat.T @ gf
        return conv_weight_grad(x, g, self.kernel, self.stride, self.pad, dtype)

    @classmethod
    def infer(cls, w, in_shape) -> "Connection":
        """Default wiring for bare weights: FC for 2-D, 'same' conv for 4-D."""
        w = np.asarray(w)
        if w.ndim == 2:
            return cls(LayerKind.FC, tuple(in_shape), w.shape[1])
        if w.ndim == 4:
            k = w.shape[0]
            return cls(LayerKind.CONV, tuple(in_shape), w.shape[3], k, 1, k // 2)
        raise ConfigurationError(f"cannot infer layer type from weight shape {w.shape}")


@dataclass(frozen=True)
class WeightLayer:
    index: int
    spec: LayerSpec
    connection: Connection

    @property
    def out_shape(self):
        return self.connection.out_shape


def build_plan(net: NetworkSpec) -> List[WeightLayer]:
    """Resolve the layer string into chained weight layers (pools folded in)."""
    plan = []
    shape = tuple(net.input_shape)
    pending_pools = []
    for spec in net.layers:
        if spec.kind is LayerKind.AVGPOOL:
            pending_pools.append(spec.pool)
            continue
        conn = Connection(spec.kind, shape, spec.out_channels, spec.kernel, spec.stride,
                          spec.padding, tuple(pending_pools))
        conn.out_shape  # raises on impossible geometry
        plan.append(WeightLayer(len(plan), spec, conn))
        shape = conn.out_shape
        pending_pools = []
    return plan


def init_weights(net: NetworkSpec, seed=0, gain=1.0) -> List[np.ndarray]:
    rng = np.random.default_rng(seed)
    weights = []
    for layer in build_plan(net):
        shape = layer.connection.weight_shape
        fan_in = int(np.prod(shape[:-1]))
        weights.append((rng.standard_normal(shape) * gain / np.sqrt(fan_in)).astype(FP32))
    return weights


def _check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise DataError(f"{name} contains non-finite values")


# --------------------------------------------------------------------------
# neuron dynamics
# --------------------------------------------------------------------------

def fire_derivative(u, p: LifParams):
    """Rectangular surrogate: ``beta`` strictly inside (th_l, th_r), else 0."""
    u = np.asarray(u)
    inside = (u > p.th_l) & (u < p.th_r)
    out = np.where(inside, p.beta, 0.0)
    return out.astype(u.dtype) if np.issubdtype(u.dtype, np.floating) else out


def spike_grad_mask(u, p: LifParams):
    return (u > p.th_l) & (u < p.th_r)


def lif_forward_layer(s_in, state, w, p: LifParams, connection: Optional[Connection] = None,
                      dtype=FP32):
    """One timestep of one LIF layer.

    Returns ``(s_out, u_out, spike_grad_mask)``.  ``u_out`` is the
    post-integration, pre-reset potential; the reset acts through the
    ``(1 - s_prev)`` factor at the next step.  ``state`` is ``(u_prev,
    s_prev)`` or ``None`` at t = 0.
    """
    s_in = np.asarray(s_in)
    w = np.asarray(w)
    _check_finite("weights", w)
    if s_in.ndim == 2:  # flat (N, C) vectors: run as (N, C, 1, 1) and flatten back
        if state is not None:
            state = tuple(np.asarray(a).reshape(*np.shape(a), 1, 1) for a in state)
        s, u, m = lif_forward_layer(s_in.reshape(*s_in.shape, 1, 1), state, w, p, connection, dtype)
        return s.reshape(s.shape[:2]), u.reshape(u.shape[:2]), m.reshape(m.shape[:2])
    if connection is None:
        connection = Connection.infer(w, s_in.shape[1:])
    if tuple(s_in.shape[1:]) != tuple(connection.in_shape):
        raise ConfigurationError(f"input shape {s_in.shape[1:]} does not match layer input {connection.in_shape}")
    if tuple(w.shape) != tuple(connection.weight_shape):
        raise ConfigurationError(f"weight shape {w.shape} does not match {connection.weight_shape}")
    out_shape = (s_in.shape[0], *connection.out_shape)
    spatial = connection.forward(s_in, w, dtype)
    if state is None:
        u = spatial.astype(dtype, copy=False)
    else:
        u_prev, s_prev = state
        if tuple(np.shape(u_prev)) != out_shape or tuple(np.shape(s_prev)) != out_shape:
            raise ConfigurationError(f"state shape does not match layer output {out_shape}")
        keep = (1 - np.asarray(s_prev, dtype=dtype)).astype(dtype)
        temporal = (dtype(p.alpha) * np.asarray(u_prev, dtype=dtype)) * keep
        u = (temporal + spatial).astype(dtype, copy=False)
    s_out = u >= dtype(p.th_f)
    return s_out, u, spike_grad_mask(u, p)


def grad_math(spatial, grad_u_next, u, s, p: LifParams, valid=None, dtype=FP32):
    """Both lines of the BPTT recurrence for one layer and timestep.

    ``valid`` optionally overrides the surrogate window test (used when ``u``
    is a decompressed copy that is zero outside the window).
    """
    alpha = dtype(p.alpha)
    u = np.asarray(u, dtype=dtype)
    if valid is None:
        valid = spike_grad_mask(u, p)
    fd = np.where(valid, dtype(p.beta), dtype(0)).astype(dtype)
    grad_u_next = np.asarray(grad_u_next, dtype=dtype)
    grad_s = (grad_u_next * (-(alpha * u))).astype(dtype) + np.asarray(spatial, dtype=dtype)
    keep = (1 - np.asarray(s, dtype=dtype)).astype(dtype)
    grad_u = ((grad_u_next * alpha) * keep).astype(dtype) + (grad_s * fd).astype(dtype)
    return grad_s.astype(dtype, copy=False), grad_u.astype(dtype, copy=False)


def backward_layer(grad_u_next_t, u_t, grad_u_upper, w, s_t, p: LifParams,
                   connection: Optional[Connection] = None, dtype=FP32):
    """Backward step of one layer at one timestep.

    ``grad_u_next_t`` is this layer's potential gradient at t+1 (``None``
    at the last timestep), ``grad_u_upper`` the next layer's potential
    gradient at t.  Returns ``(grad_s, grad_u, pot_grad_mask)``.
    """
    u_t = np.asarray(u_t)
    if connection is None:
        connection = Connection.infer(w, u_t.shape[1:])
    if tuple(u_t.shape[1:]) != tuple(connection.in_shape):
        raise ConfigurationError(f"potential shape {u_t.shape[1:]} does not match {connection.in_shape}")
    if tuple(np.shape(grad_u_upper)[1:]) != tuple(connection.out_shape):
        raise ConfigurationError(f"upper gradient shape {np.shape(grad_u_upper)[1:]} does not match {connection.out_shape}")
    if np.shape(s_t) != u_t.shape:
        raise ConfigurationError("spike and potential shapes differ")
    if grad_u_next_t is None:
        grad_u_next_t = np.zeros_like(u_t, dtype=dtype)
    elif np.shape(grad_u_next_t) != u_t.shape:
        raise ConfigurationError("temporal gradient and potential shapes differ")
    spatial = connection.backward_input(np.asarray(grad_u_upper), np.asarray(w), dtype)
    grad_s, grad_u = grad_math(spatial, grad_u_next_t, u_t, s_t, p, dtype=dtype)
    return grad_s, grad_u, grad_u != 0


def weight_gradient(grad_u_upper_all_t, s_all_t, connection: Optional[Connection] = None,
                    kernel: Optional[int] = None, dtype=FP32):
    """Sum over samples, timesteps and positions of upper-gradient x input."""
    g = np.asarray(grad_u_upper_all_t)
    s = np.asarray(s_all_t)
    if g.shape[:2] != s.shape[:2]:
        raise ConfigurationError(f"batch/time dims differ: {g.shape[:2]} vs {s.shape[:2]}")
    n, t = s.shape[:2]
    if g.ndim == 3:
        g = g[..., None, None]
    if connection is None:
        if kernel is None:
            connection = Connection(LayerKind.FC, s.shape[2:], g.shape[2])
        else:
            # 'same' when the maps match, otherwise 'valid'
            pad = kernel // 2 if g.shape[-2:] == s.shape[-2:] else 0
            connection = Connection(LayerKind.CONV, s.shape[2:], g.shape[2], kernel, 1, pad)
    if tuple(g.shape[2:]) != tuple(connection.out_shape):
        raise ConfigurationError(f"gradient shape {g.shape[2:]} does not match {connection.out_shape}")
    flat_s = s.reshape(n * t, *s.shape[2:])
    flat_g = g.reshape(n * t, *g.shape[2:])
    return connection.weight_grad(flat_s, flat_g, dtype)


def output_spike_gradient(s_out, labels, n_classes=None):
    """Rate-coded MSE loss and dL/ds for every output timestep.

    Returns ``(loss, grad_s)`` with ``loss`` summed over samples and
    ``grad_s`` shaped ``(N, T, C)``.
    """
    s = np.asarray(s_out, dtype=np.float64)
    s = s.reshape(s.shape[0], s.shape[1], -1)
    n, t, c = s.shape
    labels = np.asarray(labels)
    n_classes = c if n_classes is None else n_classes
    if labels.shape != (n,):
        raise DataError(f"expected {n} labels, got shape {labels.shape}")
    if np.any(labels < 0) or np.any(labels >= min(c, n_classes)):
        raise DataError(f"labels must lie in [0, {min(c, n_classes)})")
    rate = s.mean(axis=1)
    target = np.zeros((n, c))
    target[np.arange(n), labels] = 1.0
    diff = rate - target
    loss = float((diff ** 2).sum())
    grad_s = np.broadcast_to((2.0 / t) * diff[:, None, :], (n, t, c))
    return loss, np.array(grad_s)


def loss_and_output_gradient(s_out, u_out, labels, p: LifParams, n_classes=None):
    """Loss and the seed potential gradient ``(2/T)(r - y) fire'(u_t)``.

    The seed is the direct (loss-to-potential) path at every timestep;
    ``train_step`` additionally chains the output layer through time.
    Returns ``(seed, loss)`` with ``seed`` shaped like ``u_out``.
    """
    loss, grad_s = output_spike_gradient(s_out, labels, n_classes)
    u = np.asarray(u_out)
    seed = grad_s.reshape(u.shape) * fire_derivative(u.astype(np.float64), p)
    return seed.astype(u.dtype), loss


# --------------------------------------------------------------------------
# whole training step
# --------------------------------------------------------------------------

@dataclass
class LayerRecord:
    """Tensors of one weight layer for one sub-batch, all with leading (N, T)."""

    inputs: np.ndarray
    u: np.ndarray
    s: np.ndarray
    spike_mask: np.ndarray
    grad_u: Optional[np.ndarray] = None
    grad_mask: Optional[np.ndarray] = None
    grad_w: Optional[np.ndarray] = None


@dataclass
class SubBatchRecord:
    layers: List[LayerRecord]
    labels: np.ndarray
    loss: float


@dataclass
class TrainResult:
    weights: List[np.ndarray]
    loss: float
    grads: List[np.ndarray]
    records: List[SubBatchRecord] = field(default_factory=list)


def expand_input(batch, timesteps: int):
    x = np.asarray(batch)
    if x.ndim == 4:
        return np.repeat(x[:, None], timesteps, axis=1)
    if x.ndim == 5:
        if x.shape[1] != timesteps:
            raise ConfigurationError(f"input carries {x.shape[1]} timesteps, network expects {timesteps}")
        return x
    raise ConfigurationError(f"input batch must be 4-D or 5-D, got {x.ndim}-D")


def forward_pass(net: NetworkSpec, x, weights, plan=None, dtype=FP32) -> List[LayerRecord]:
    plan = plan or build_plan(net)
    p = net.lif
    records = []
    for layer, w in zip(plan, weights):
        n, t_steps = x.shape[:2]
        u_all = np.zeros((n, t_steps, *layer.out_shape), dtype=dtype)
        s_all = np.zeros((n, t_steps, *layer.out_shape), dtype=bool)
        m_all = np.zeros_like(s_all)
        state = None
        for t in range(t_steps):
            s, u, m = lif_forward_layer(x[:, t], state, w, p, layer.connection, dtype)
            u_all[:, t], s_all[:, t], m_all[:, t] = u, s, m
            state = (u, s)
        records.append(LayerRecord(inputs=x, u=u_all, s=s_all, spike_mask=m_all))
        x = s_all
    return records


def backward_pass(net: NetworkSpec, records: List[LayerRecord], labels, weights, plan=None,
                  dtype=FP32) -> float:
    """Fill ``grad_u``, ``grad_mask`` and ``grad_w`` of ``records``; return the loss."""
    plan = plan or build_plan(net)
    p = net.lif
    top = records[-1]
    loss, grad_s_out = output_spike_gradient(top.s, labels)
    for j in reversed(range(len(plan))):
        rec = records[j]
        n, t_steps = rec.u.shape[:2]
        grad_u = np.zeros_like(rec.u, dtype=dtype)
        grad_next = np.zeros(rec.u.shape[:1] + rec.u.shape[2:], dtype=dtype)
        for t in reversed(range(t_steps)):
            if j == len(plan) - 1:
                spatial = grad_s_out[:, t].reshape(grad_next.shape).astype(dtype)
            else:
                upper = records[j + 1]
                spatial = plan[j + 1].connection.backward_input(upper.grad_u[:, t], weights[j + 1], dtype)
            _, gu = grad_math(spatial, grad_next, rec.u[:, t], rec.s[:, t], p, dtype=dtype)
            grad_u[:, t] = gu
            grad_next = gu
        rec.grad_u = grad_u
        rec.grad_mask = grad_u != 0
        rec.grad_w = weight_gradient(grad_u, rec.inputs, plan[j].connection, dtype=dtype)
    return loss


def check_step_inputs(net: NetworkSpec, batch, labels, weights):
    """Validate a training batch; returns ``(x_all, labels, plan)``."""
    x_all = expand_input(batch, net.timesteps)
    labels = np.asarray(labels)
    if x_all.shape[0] != net.batch_size:
        raise ConfigurationError(f"batch holds {x_all.shape[0]} samples, expected "
                                 f"{net.sub_batch} x {net.batch_group} = {net.batch_size}")
    plan = build_plan(net)
    if len(weights) != len(plan):
        raise ConfigurationError(f"{len(plan)} weight layers but {len(weights)} weight tensors")
    for layer, w in zip(plan, weights):
        if tuple(np.shape(w)) != tuple(layer.connection.weight_shape):
            raise ConfigurationError(f"layer {layer.index}: weight shape {np.shape(w)} != {layer.connection.weight_shape}")
        _check_finite(f"layer {layer.index} weights", w)
    if not plan[0].spec.is_encoding and not np.isin(x_all, (0, 1)).all():
        raise DataError("non-encoding first layer needs binary spike input")
    if tuple(x_all.shape[2:]) != tuple(net.input_shape):
        raise ConfigurationError(f"input shape {x_all.shape[2:]} != {net.input_shape}")
    return x_all, labels, plan


def train_step(net: NetworkSpec, batch, labels, weights, lr=0.1, dtype=FP32,
               keep_records=True) -> TrainResult:
    """Forward, backward and one SGD update over a full batch group.

    The batch is processed in ``batch_group`` sub-batches of ``sub_batch``
    samples; weight gradients accumulate across sub-batches and the update
    ``w -= lr * grad / batch_size`` is applied once at the end.
    """
    x_all, labels, plan = check_step_inputs(net, batch, labels, weights)
    grads = [np.zeros(layer.connection.weight_shape, dtype=dtype) for layer in plan]
    total_loss = 0.0
    records = []
    for b in range(net.batch_group):
        sl = slice(b * net.sub_batch, (b + 1) * net.sub_batch)
        layer_records = forward_pass(net, x_all[sl], weights, plan, dtype)
        loss = backward_pass(net, layer_records, labels[sl], weights, plan, dtype)
        for g, rec in zip(grads, layer_records):
            g += rec.grad_w
        total_loss += loss
        if keep_records:
            records.append(SubBatchRecord(layer_records, labels[sl], loss))
    new_weights = [(np.asarray(w, dtype=dtype) - dtype(lr) * (g / dtype(net.batch_size))).astype(dtype)
                   for w, g in zip(weights, grads)]
    mean_loss = total_loss / net.batch_size
    log.debug("train_step loss=%.6f", mean_loss)
    return TrainResult(new_weights, mean_loss, grads, records)
