"""Self-checks run by ``h2sim verify``: oracle equivalence and invariants.

Integer fixtures (leak 1, thresholds and window on integers, small integer
weights, binary inputs, power-of-two timestep counts) keep every
intermediate value exactly representable, so the engine model, the golden
model and the unrolled autodiff oracle must agree bit for bit.  Float
fixtures use random leaks and are held to a relative tolerance.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from .core import build_plan, conv_forward, conv_weight_grad, train_step
from .cycles import replay_counters, tile_feature_map, tile_pair_tasks
from .engines import engine_train_step
from .errors import CorruptedStateError
from .lut import CompressedPotentialTile, lut_conv_forward, lut_conv_weightgrad
from .oracle import unrolled_train_step
from .pipeline import schedule_training_step
from .sparse import count_tasks, generate_tasks
from .tensors import LayerKind, LayerSpec, LifParams, NetworkSpec

FP32 = np.float32
INTEGER_LIF = LifParams(alpha=1.0, th_f=1.0, th_l=0.5, th_r=2.5, beta=1.0)
FLOAT_RTOL = 1e-5


@dataclass
class Fixture:
    net: NetworkSpec
    weights: List[np.ndarray]
    batch: np.ndarray
    labels: np.ndarray
    integer: bool


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail} ({self.seconds:.2f}s)"


# --------------------------------------------------------------------------
# fixtures
# --------------------------------------------------------------------------

def random_network(rng: np.random.Generator, integer: bool, sub_batch: int = 2) -> NetworkSpec:
    """Small random conv/FC stack with optional pools, strides and an encoding layer."""
    cin = int(rng.integers(1, 5))
    h = int(rng.integers(3, 8))
    t = int(rng.choice([1, 2, 4])) if integer else int(rng.integers(1, 5))
    n_layers = int(rng.integers(1, 4))
    encoding = not integer and rng.random() < 0.3
    layers = []
    for i in range(n_layers):
        last = i == n_layers - 1
        if i > 0 and rng.random() < 0.3:
            layers.append(LayerSpec(LayerKind.AVGPOOL, pool=2))
        if not last and rng.random() < 0.5:
            layers.append(LayerSpec(LayerKind.CONV, int(rng.integers(1, 9)), int(rng.choice([1, 3, 5])),
                                    int(rng.choice([1, 1, 2])), is_encoding=encoding and i == 0))
        else:
            layers.append(LayerSpec(LayerKind.FC, int(rng.integers(2, 9))))
    if integer:
        lif = INTEGER_LIF
    else:
        lif = LifParams(alpha=float(rng.uniform(0.3, 1.0)))
    return NetworkSpec((cin, h, h), t, tuple(layers), lif, sub_batch=sub_batch, batch_group=1)


def random_fixture(rng: np.random.Generator, integer: bool, attempts: int = 20) -> Fixture:
    """Draw fixtures until one produces a non-zero weight gradient."""
    fx = None
    for _ in range(attempts):
        net = random_network(rng, integer)
        plan = build_plan(net)
        weights = []
        for layer in plan:
            shape = layer.connection.weight_shape
            if integer:
                w = rng.integers(-2, 3, shape)
            else:
                w = rng.standard_normal(shape) * 1.5 / np.sqrt(np.prod(shape[:-1]))
            weights.append(w.astype(FP32))
        n = net.batch_size
        if plan[0].spec.is_encoding:
            batch = rng.random((n, *net.input_shape)).astype(FP32)
        else:
            batch = (rng.random((n, net.timesteps, *net.input_shape)) < 0.5).astype(FP32)
        labels = rng.integers(0, plan[-1].out_shape[0], n)
        fx = Fixture(net, weights, batch, labels, integer)
        golden = train_step(net, batch, labels, weights, lr=0.0, keep_records=False)
        if any(np.any(g != 0) for g in golden.grads):
            return fx
    return fx


def _rel(a, b) -> float:
    scale = max(float(np.abs(b).max(initial=0.0)), 1e-30)
    return float(np.abs(np.asarray(a, np.float64) - b).max(initial=0.0)) / scale


# --------------------------------------------------------------------------
# suites
# --------------------------------------------------------------------------

def check_oracle_equivalence(rng, configs: int = 100) -> Tuple[bool, str]:
    """Engine vs golden vs oracle over alternating integer and float fixtures."""
    failures = []
    worst_float = 0.0
    for i in range(configs):
        fx = random_fixture(rng, integer=i % 2 == 0)
        golden = train_step(fx.net, fx.batch, fx.labels, fx.weights, lr=0.0)
        engine = engine_train_step(fx.net, fx.batch, fx.labels, fx.weights, lr=0.0, fe_rows=2)
        if fx.integer:
            oracle = unrolled_train_step(fx.net, fx.batch, fx.labels, fx.weights)
            ok = all(np.array_equal(e, g) and np.array_equal(g, o)
                     for e, g, o in zip(engine.grads, golden.grads, oracle.grads))
            ok &= engine.loss == golden.loss and golden.loss * fx.net.batch_size == oracle.loss
        else:
            # Float64 golden against the float64 oracle, float32 engine against float32 golden.
            g64 = train_step(fx.net, fx.batch, fx.labels, fx.weights, lr=0.0, dtype=np.float64)
            oracle = unrolled_train_step(fx.net, fx.batch, fx.labels, fx.weights)
            errs = [_rel(e, g) for e, g in zip(engine.grads, golden.grads)]
            errs += [_rel(g, o) for g, o in zip(g64.grads, oracle.grads)]
            worst_float = max(worst_float, max(errs))
            ok = max(errs) <= FLOAT_RTOL
        if not ok:
            failures.append(f"#{i} {fx.net.describe()}")
    detail = f"{configs - len(failures)}/{configs} fixtures agree (worst float rel err {worst_float:.2e})"
    if failures:
        detail += "; failing: " + ", ".join(failures[:3])
    return not failures, detail


def check_replay_counters(rng, configs: int = 20) -> Tuple[bool, str]:
    """Closed-form replay counts equal the engine model's counters."""
    bad = 0
    for _ in range(configs):
        fx = random_fixture(rng, integer=True)
        engine = engine_train_step(fx.net, fx.batch, fx.labels, fx.weights, lr=0.0, fe_rows=2)
        golden = train_step(fx.net, fx.batch, fx.labels, fx.weights, lr=0.0)
        replay = replay_counters(golden.records, build_plan(fx.net))
        counted = [Counter({k: v for k, v in c.items() if v}) for c in engine.counters]
        bad += replay != counted
    return bad == 0, f"{configs - bad}/{configs} networks match op-for-op"


def _naive_task_count(out_mask, in_mask, k, stride, pad):
    cl, h, w = out_mask.shape
    cu, ho, wo = in_mask.shape
    total = 0
    for ci in range(cl):
        for y in range(h):
            for x in range(w):
                if not out_mask[ci, y, x]:
                    continue
                for p in range(k):
                    for q in range(k):
                        ny, nx = y + pad - p, x + pad - q
                        if ny % stride or nx % stride:
                            continue
                        oy, ox = ny // stride, nx // stride
                        if 0 <= oy < ho and 0 <= ox < wo:
                            total += int(in_mask[:, oy, ox].sum())
    return total


def check_sparse_work(rng, tiles: int = 1000) -> Tuple[bool, str]:
    """Sparse-mode MAC counts equal a brute-force count of nonzero products."""
    bad = 0
    for _ in range(tiles):
        k = int(rng.choice([1, 3, 5]))
        stride = int(rng.choice([1, 2]))
        pad = k // 2
        cl, cu = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(1, 9)), int(rng.integers(1, 9))
        ho, wo = (h + 2 * pad - k) // stride + 1, (w + 2 * pad - k) // stride + 1
        out_mask = rng.random((cl, h, w)) < rng.random()
        in_mask = rng.random((cu, ho, wo)) < rng.random()
        expected = _naive_task_count(out_mask, in_mask, k, stride, pad)
        generated = int(generate_tasks(out_mask, in_mask, k, stride, pad)["ci"].size)
        counted = count_tasks(out_mask, in_mask, k, stride, pad)
        conn = _FakeConn(k, stride, pad)
        plan = tile_feature_map((h, w), k=k, stride=stride, pad=pad)
        tiled = sum(int(m.sum()) for m in tile_pair_tasks(out_mask, in_mask, conn, plan))
        bad += len({expected, generated, counted, tiled}) != 1
    return bad == 0, f"{tiles - bad}/{tiles} random tiles match the brute-force count"


@dataclass
class _FakeConn:
    kernel: int
    stride: int
    pad: int


def check_lut_conv(rng, trials: int = 40) -> Tuple[bool, str]:
    """LUT forward and weight-gradient convolutions equal direct convolution."""
    bad = 0
    for i in range(trials):
        k = (1, 2, 3, 5, 7)[i % 5]
        stride = 1 + (i // 5) % 2
        cin, cout = int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(k, k + 6)), int(rng.integers(k, k + 6))
        pad = k // 2
        spikes = rng.random((cin, h, w)) < 0.4
        kernel = rng.integers(-3, 4, (k, k, cin, cout)).astype(FP32)
        direct = conv_forward(spikes[None].astype(FP32), kernel, stride, pad)[0]
        looked = lut_conv_forward(spikes, kernel, stride=stride, pad=pad).values
        g = rng.integers(-3, 4, direct.shape).astype(FP32)
        dw_direct = conv_weight_grad(spikes[None].astype(FP32), g[None], k, stride, pad)
        dw_lut = lut_conv_weightgrad(spikes, g, k, stride=stride, pad=pad)
        bad += not (np.array_equal(direct, looked) and np.array_equal(dw_direct, dw_lut))
    return bad == 0, f"{trials - bad}/{trials} kernels (k in 1,2,3,5,7; stride 1,2) exact"


def check_pipeline(rng, cases: int = 200) -> Tuple[bool, str]:
    """Pipelined totals never exceed sequential ones; one sub-batch means no overlap."""
    bad = 0
    for _ in range(cases):
        layers = int(rng.integers(1, 6))
        group = int(rng.integers(1, 9))
        per_sub = [[{e: int(rng.integers(0, 1000)) for e in ("FE", "BE", "WUE")} for _ in range(layers)]
                   for _ in range(group)]
        apply = int(rng.integers(0, 100))
        rep = schedule_training_step(per_sub, 4, group, apply)
        bad += rep.total_cycles > rep.sequential_cycles
        single = schedule_training_step(per_sub[:1], 4, 1, apply)
        bad += single.total_cycles != single.sequential_cycles
    return bad == 0, f"{cases - bad}/{cases} random schedules satisfy the bounds"


def check_compression(rng, cases: int = 200) -> Tuple[bool, str]:
    """Compress then decompress restores potentials wherever the mask is set."""
    bad = 0
    for _ in range(cases):
        shape = tuple(int(v) for v in rng.integers(1, 9, 3))
        u = rng.standard_normal(shape).astype(FP32)
        mask = rng.random(shape) < rng.random()
        tile = CompressedPotentialTile.compress(u, mask)
        bad += not np.array_equal(tile.decompress(), np.where(mask, u, 0))
    try:
        CompressedPotentialTile(np.ones((2, 2), bool), np.zeros(3, FP32))
        bad += 1
    except CorruptedStateError:
        pass
    return bad == 0, f"{cases - bad}/{cases} round trips exact, count mismatch rejected"


def check_lut_storage(engine_cfgs) -> Tuple[bool, str]:
    sizes = {cfg.kind: cfg.lut_bytes for cfg in engine_cfgs.values() if cfg.kind != "BE"}
    expected = {"FE": 49152, "WUE": 81920}
    # Only meaningful for the shipped geometry; other geometries just report.
    stock = all(getattr(engine_cfgs[k], "pe_rows") == r and getattr(engine_cfgs[k], "pe_cols") == c
                for k, r, c in (("FE", 64, 16), ("WUE", 10, 128)))
    ok = sizes == expected if stock else True
    return ok, ", ".join(f"{k} {v} B" for k, v in sorted(sizes.items()))


def run_suites(seed: int = 0, configs: int = 100, tiles: int = 1000, pipeline: int = 200,
               engine_cfgs=None, log: Optional[Callable[[str], None]] = None) -> List[CheckResult]:
    from .cycles import BE_DEFAULT, FE_DEFAULT, WUE_DEFAULT
    engine_cfgs = engine_cfgs or {"FE": FE_DEFAULT, "WUE": WUE_DEFAULT, "BE": BE_DEFAULT}
    suites = [
        ("lut-storage", lambda rng: check_lut_storage(engine_cfgs)),
        ("lut-convolution", lambda rng: check_lut_conv(rng)),
        ("oracle-equivalence", lambda rng: check_oracle_equivalence(rng, configs)),
        ("replay-counters", lambda rng: check_replay_counters(rng, max(1, configs // 5))),
        ("sparse-work", lambda rng: check_sparse_work(rng, tiles)),
        ("pipeline-bounds", lambda rng: check_pipeline(rng, pipeline)),
        ("potential-compression", lambda rng: check_compression(rng)),
    ]
    results = []
    for i, (name, fn) in enumerate(suites):
        t0 = time.perf_counter()
        ok, detail = fn(np.random.default_rng([seed, i]))
        res = CheckResult(name, bool(ok), detail, time.perf_counter() - t0)
        results.append(res)
        if log:
            log(res.line())
    return results
