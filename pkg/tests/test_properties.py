import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from h2sim.core import conv_forward
from h2sim.cost import CostConstants, tally_energy
from h2sim.lut import CompressedPotentialTile, lut_conv_forward
from h2sim.pipeline import schedule_training_step
from h2sim.sparse import count_tasks, generate_tasks
from h2sim.verify import _FakeConn, _naive_task_count  # noqa: F401

seeds = st.integers(0, 2**32 - 1)


@settings(max_examples=50, deadline=None)
@given(seeds, st.sampled_from([1, 2, 3, 5]), st.sampled_from([1, 2]))
def test_lut_forward_equals_direct(seed, k, stride):
    rng = np.random.default_rng(seed)
    cin, cout = rng.integers(1, 4, 2)
    h = int(rng.integers(k, k + 5))
    spikes = rng.random((cin, h, h)) < rng.random()
    w = rng.integers(-4, 5, (k, k, cin, cout)).astype(np.float32)
    direct = conv_forward(spikes[None].astype(np.float32), w, stride, k // 2)[0]
    assert np.array_equal(lut_conv_forward(spikes, w, stride=stride).values, direct)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_finder_buffers_balance(seed):
    rng = np.random.default_rng(seed)
    out_mask = rng.random((2, 6, 6)) < rng.random()
    tasks = generate_tasks(out_mask, np.ones((1, 6, 6), bool), 1)
    for ci in range(2):
        bufs = tasks["buf"][tasks["ci"] == ci]
        assert abs(int((bufs == 0).sum()) - int((bufs == 1).sum())) <= 1


@settings(max_examples=50, deadline=None)
@given(seeds, st.sampled_from([1, 3, 5]))
def test_task_count_monotone_in_masks(seed, k):
    rng = np.random.default_rng(seed)
    out_mask = rng.random((2, 6, 6)) < 0.4
    in_mask = rng.random((3, 6, 6)) < 0.4
    base = count_tasks(out_mask, in_mask, k)
    more_out, more_in = out_mask.copy(), in_mask.copy()
    more_out.flat[rng.integers(out_mask.size)] = True
    more_in.flat[rng.integers(in_mask.size)] = True
    assert count_tasks(more_out, in_mask, k) >= base
    assert count_tasks(out_mask, more_in, k) >= base
    assert base == _naive_task_count(out_mask, in_mask, k, 1, k // 2)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(*[st.integers(0, 10**6)] * 3), min_size=1, max_size=6),
       st.integers(1, 8), st.integers(0, 1000))
def test_pipeline_never_slower_than_sequential(layers, group, apply):
    per_layer = [{"FE": fe, "BE": be, "WUE": wue} for fe, be, wue in layers]
    rep = schedule_training_step(per_layer, 4, group, apply)
    assert rep.total_cycles <= rep.sequential_cycles
    if group == 1:
        assert rep.total_cycles == rep.sequential_cycles


@settings(max_examples=100, deadline=None)
@given(st.dictionaries(st.sampled_from(["fe.lut_reads", "fe.adds", "be.macs", "be.tags", "wue.adds"]),
                       st.integers(0, 10**6)), st.integers(1, 5))
def test_energy_linear(counts, factor):
    k = CostConstants(lut_read=0.3, fp16_add=0.7, fp16_mac=1.9, finder_bit=0.05)
    one = tally_energy(counts, {}, k).total
    many = tally_energy({key: v * factor for key, v in counts.items()}, {}, k).total
    assert np.isclose(many, factor * one)


@settings(max_examples=100, deadline=None)
@given(seeds)
def test_compression_roundtrip(seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((3, 5, 5)).astype(np.float32)
    mask = rng.random(u.shape) < rng.random()
    assert np.array_equal(CompressedPotentialTile.compress(u, mask).decompress(), np.where(mask, u, 0))
