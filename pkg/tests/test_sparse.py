from collections import Counter

import numpy as np
import pytest

from h2sim.core import LifParams, backward_layer, conv_backward_input
from h2sim.errors import CorruptedStateError
from h2sim.lut import CompressedPotentialTile
from h2sim.sparse import (ConvTask, count_tasks, effectual_io_finder, effectual_output_finder,
                          execute_tasks, fc_backward_mode, generate_tasks, grad_unit,
                          sparse_conv_execute, window_tag)


def finder(mask):
    mask = np.asarray(mask, bool)
    return effectual_output_finder(mask, CompressedPotentialTile.compress(np.ones(mask.shape, np.float32), mask))


def test_output_finder_buffers():
    (b0, b1), _ = finder(np.zeros((4, 4)))
    assert len(b0) == len(b1) == 0
    mask = np.zeros((4, 4), bool)
    mask.flat[[0, 3, 5, 9, 14]] = True
    (b0, b1), _ = finder(mask)
    assert (len(b0), len(b1)) == (3, 2)
    mask = np.zeros((4, 4), bool)
    mask[2, 3] = True
    (b0, _), _ = finder(mask)
    assert b0.ids == [(2, 3)]


def test_output_finder_rejects_mismatch():
    mask = np.ones((2, 2), bool)
    tile = CompressedPotentialTile.compress(np.ones((2, 2)), np.eye(2, dtype=bool))
    with pytest.raises(CorruptedStateError):
        effectual_output_finder(mask, tile)


def test_io_finder_two_set_bits():
    # 2x2 kernel, no padding: the window of out-id (1, 1) holds in-ids (0,0)..(1,1) as bits 0..3.
    in_mask = np.zeros((2, 2), bool)
    in_mask[1, 1] = in_mask[0, 0] = True
    tasks = list(effectual_io_finder((1, 1), in_mask, 2, pad=0))
    assert window_tag((1, 1), in_mask, 2, pad=0) == 0b1001
    assert [t.w_id for t in tasks] == [(1, 1), (0, 0)]


def test_io_finder_empty_and_dense():
    assert not list(effectual_io_finder((1, 1), np.zeros((3, 3), bool), 3))
    tasks = list(effectual_io_finder((1, 1), np.ones((3, 3), bool), 3))
    assert len(tasks) == 9
    assert [t.w_id for t in tasks] == [(2 - i // 3, 2 - i % 3) for i in range(9)]


def test_single_task():
    w = np.zeros((3, 3))
    w[1, 1] = 0.5
    g = np.zeros((4, 4))
    g[2, 2] = 0.2
    ps = sparse_conv_execute([ConvTask((2, 2), (1, 1), (2, 2))], w, g, (4, 4))
    assert ps[2, 2] == pytest.approx(0.1)
    assert not sparse_conv_execute([], w, g, (4, 4)).any()


@pytest.mark.parametrize("stride", [1, 2])
def test_tasks_equal_masked_transposed_conv(rng, stride):
    k, cl, cu = 3, 3, 4
    h = w = 7
    ho = (h + 2 - k) // stride + 1
    out_mask = rng.random((cl, h, w)) < 0.5
    in_mask = rng.random((cu, ho, ho)) < 0.5
    wk = rng.integers(-3, 4, (k, k, cl, cu)).astype(np.float32)
    g = (rng.integers(-3, 4, (cu, ho, ho)) * in_mask).astype(np.float32)
    tasks = generate_tasks(out_mask, in_mask, k, stride)
    ctr = Counter()
    ps = execute_tasks(tasks, wk, g, (cl, h, w), counter=ctr)
    dense = conv_backward_input(g[None], wk, (h, w), stride, 1)[0]
    assert np.array_equal(ps, np.where(out_mask, dense, 0))
    assert ctr["be.macs"] == count_tasks(out_mask, in_mask, k, stride)


def test_task_order_follows_buffers(rng):
    out_mask = rng.random((1, 5, 5)) < 0.6
    tasks = generate_tasks(out_mask, np.ones((1, 5, 5), bool), 3)
    assert np.all(np.diff(tasks["buf"]) >= 0)


def test_grad_unit_scalar():
    p = LifParams(alpha=0.5, th_l=0.0, th_r=1.0)
    one = lambda v: np.array([[v]], np.float32)  # noqa: E731
    gu, _ = grad_unit(one(0.3), one(0.5), one(0.2), one(0), np.ones((1, 1), bool), p)
    assert gu[0, 0] == pytest.approx(0.35)
    gu, m = grad_unit(one(0.0), one(0.0), one(0.0), one(0), np.zeros((1, 1), bool), p)
    assert gu[0, 0] == 0 and not m.any()


def test_composed_backward_equals_dense(rng):
    p = LifParams(alpha=1.0, th_f=1.0, th_l=0.5, th_r=2.5)
    cl, cu, h = 2, 3, 6
    u = rng.integers(-1, 4, (cl, h, h)).astype(np.float32)
    s = u >= 1
    mask = (u > 0.5) & (u < 2.5)
    wk = rng.integers(-2, 3, (3, 3, cl, cu)).astype(np.float32)
    g_up = rng.integers(-2, 3, (cu, h, h)).astype(np.float32)
    g_next = rng.integers(-2, 3, (cl, h, h)).astype(np.float32)
    _, dense, _ = backward_layer(g_next[None], u[None], g_up[None], wk, s[None], p)
    tile = CompressedPotentialTile.compress(u, mask)
    tasks = generate_tasks(mask, g_up != 0, 3)
    ps = execute_tasks(tasks, wk, g_up, (cl, h, h))
    sparse, _ = grad_unit(ps, tile.decompress(), g_next, s.astype(np.float32), mask, p)
    assert np.array_equal(sparse, dense[0])


def test_fc_backward_mode(rng):
    g = rng.standard_normal((2, 4))
    w = np.eye(4)
    assert np.allclose(fc_backward_mode(g, w), g)
    assert not fc_backward_mode(np.zeros((2, 4)), rng.standard_normal((5, 4))).any()
