from collections import Counter

import numpy as np
import pytest

from h2sim.core import conv_forward, conv_weight_grad
from h2sim.errors import ConfigurationError, CorruptedStateError, SequencingError
from h2sim.lut import (FE_LUT, WUE_LUT, CompressedPotentialTile, LutPeConfig, PartialSum, build_cost,
                       build_sublut, fc_lut_mode, kernel_segments, lut_conv_forward, lut_conv_weightgrad,
                       soma, subset_sums)
from h2sim.tensors import LifParams


def test_sublut_lookup():
    lut = build_sublut([1.0, 2.0, 4.0])
    assert lut.lookup(0b011) == 3.0
    assert lut.lookup(0) == 0.0
    assert lut.lookup(0b111) == 7.0


def test_sublut_size_limit():
    with pytest.raises(ConfigurationError):
        build_sublut(np.ones(9))


def test_split_window_halves_entries():
    # One 2x2 window as a single table versus two 1x2 tables.
    assert len(subset_sums(np.ones(4))) == 16
    assert 2 * len(subset_sums(np.ones(2))) == 8


def test_build_cost():
    assert build_cost(3) == 4 and build_cost(4) == 11


def test_storage_per_pe():
    assert FE_LUT.bytes_per_pe == 3 * 16 and WUE_LUT.bytes_per_pe == 2 * 32


def test_kernel_segments_cover_kernel():
    for k in (1, 2, 3, 5, 7):
        segs = kernel_segments(k, 3)
        assert sum(length for _, _, length in segs) == k * k


def test_lut_conv_zero_and_full(rng):
    w = rng.integers(-3, 4, (3, 3, 1, 2)).astype(np.float32)
    assert not lut_conv_forward(np.zeros((1, 3, 3), bool), w, pad=0).values.any()
    full = lut_conv_forward(np.ones((1, 3, 3), bool), w, pad=0).values
    assert np.array_equal(full[:, 0, 0], w.sum(axis=(0, 1, 2)))


def test_lut_conv_matches_direct(rng):
    spikes = rng.random((4, 8, 8)) < 0.4
    w = rng.integers(-4, 5, (3, 3, 4, 5)).astype(np.float32)
    ctr = Counter()
    ps = lut_conv_forward(spikes, w, counter=ctr)
    assert np.array_equal(ps.values, conv_forward(spikes[None].astype(np.float32), w, 1, 1)[0])
    assert ctr["fe.lut_reads"] == 8 * 8 * 4 * 5 * 3


def test_wue_segment_lookup():
    table = subset_sums(np.array([1.0, 2.0, 4.0, 8.0]))
    assert table[0b0101] == 5.0


def test_lut_weightgrad_matches_loops(rng):
    spikes = rng.random((2, 4, 4)) < 0.5
    g = rng.integers(-3, 4, (3, 3, 3)).astype(np.float32)
    dw = lut_conv_weightgrad(spikes, g, 2, pad=0)
    assert np.array_equal(dw, conv_weight_grad(spikes[None].astype(np.float32), g[None], 2, 1, 0))
    assert not lut_conv_weightgrad(np.zeros_like(spikes), g, 2, pad=0).any()


def test_fc_mode():
    out = fc_lut_mode(np.array([1, 0, 1]), np.array([[2.0], [3.0], [5.0]]))
    assert out[0] == 7.0
    assert fc_lut_mode(np.zeros(3), np.ones((3, 2))).sum() == 0


def test_fc_mode_matches_matvec(rng):
    s = rng.random((5, 12)) < 0.5
    v = rng.standard_normal((12, 4))
    assert np.allclose(fc_lut_mode(s, v), s.astype(float) @ v)


def test_soma_stores_window_potentials():
    p = LifParams(alpha=0.5, th_f=1.0, th_l=0.0, th_r=1.0)
    s, stored, mask, _ = soma(PartialSum(np.array([[0.9]], np.float32), 1, 1), None, None, p)
    assert mask[0, 0] and not s[0, 0] and stored.values.tolist() == [pytest.approx(0.9)]
    q = LifParams(alpha=0.5, th_f=1.0, th_l=0.0, th_r=1.5)
    s, stored, mask, _ = soma(PartialSum(np.array([[2.0]], np.float32), 1, 1), None, None, q)
    assert s[0, 0] and not mask[0, 0] and stored.values.size == 0


def test_soma_refuses_partial_sums():
    ps = PartialSum(np.zeros((1, 1), np.float32), 1, 2)
    with pytest.raises(SequencingError):
        soma(ps, None, None, LifParams())
    done = ps + PartialSum(np.zeros((1, 1), np.float32), 1, 2)
    assert done.complete


def test_compression_roundtrip(rng):
    u = rng.standard_normal((3, 4)).astype(np.float32)
    mask = rng.random((3, 4)) < 0.5
    tile = CompressedPotentialTile.compress(u, mask)
    assert np.array_equal(tile.decompress(), np.where(mask, u, 0))
    with pytest.raises(CorruptedStateError):
        CompressedPotentialTile(mask, np.zeros(int(mask.sum()) + 1, np.float32))


def test_lut_config_validation():
    with pytest.raises(ConfigurationError):
        LutPeConfig(3, 6, (3, 3))
