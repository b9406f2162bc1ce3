import numpy as np
import pytest

from h2sim.core import build_plan
from h2sim.cycles import (BE_DEFAULT, FE_DEFAULT, WUE_DEFAULT, LayerWorkload, MemoryConfig, TileSpec,
                          be_cycles, fe_cycles, synthetic_workloads, tile_feature_map, wue_cycles)
from h2sim.errors import ConfigurationError
from h2sim.network import parse_network


@pytest.fixture(scope="module")
def ref_plan():
    return build_plan(parse_network("256C3-256C3", (256, 56, 56), timesteps=10))


def test_tiling_56_by_16():
    plan = tile_feature_map((56, 56), TileSpec(16, 16), k=3, stride=1, pad=1)
    assert len(plan) == 16
    assert sorted({t.w for t in plan.tiles}) == [8, 16]
    assert plan.windows == 56 * 56
    assert len(tile_feature_map((5, 5), TileSpec(16, 16))) == 1


def test_bytes_per_cycle():
    assert MemoryConfig().bytes_per_cycle(800e6) == 160


def test_tile_compute_cycles():
    plan = build_plan(parse_network("64C3", (64, 16, 16), timesteps=1, sub_batch=1))
    work = synthetic_workloads(plan, 1, 1)[0]
    rep = fe_cycles(work, FE_DEFAULT)
    # one 16x16 tile: 256 windows over 4 lanes, plus a 4-add LUT build, in each of 4 grid iterations
    assert rep.grid_iterations == 4
    assert rep.compute_cycles == 4 * (64 + 4)


def test_reference_layer_cycles(ref_plan):
    works = synthetic_workloads(ref_plan, 4, 10, [[0.75, 0.75], [0.75, 0.75]])
    fe = fe_cycles(works[1])
    wue = wue_cycles(works[1])
    be = be_cycles(works[0], samples=2)
    dense = be_cycles(works[0], BE_DEFAULT.with_(baseline=True))
    assert (fe.compute_cycles, wue.compute_cycles) == (2017280, 1840832)
    assert be.bound_cycles == 1849200 and dense.bound_cycles == 17684480
    assert "dense baseline" in dense.flags


def test_wue_row_utilisation(ref_plan):
    work = synthetic_workloads(ref_plan, 4, 5)[1]
    rep = wue_cycles(work)
    assert any("5/10" in f for f in rep.flags)
    full = wue_cycles(synthetic_workloads(ref_plan, 4, 10)[1])
    assert full.grid_iterations == rep.grid_iterations


def test_wue_cols_halve_grid_iterations(ref_plan):
    work = synthetic_workloads(ref_plan, 4, 10)[1]
    base = wue_cycles(work, WUE_DEFAULT.with_(pe_cols=64)).grid_iterations
    assert wue_cycles(work, WUE_DEFAULT.with_(pe_cols=128)).grid_iterations * 2 == base


def test_be_empty_masks_is_scan_only(ref_plan):
    small = build_plan(parse_network("8C3-8C3", (8, 16, 16), timesteps=1, sub_batch=1))
    z = np.zeros((1, 1, 8, 16, 16), bool)
    work = LayerWorkload(small[0], small[1], 1, 1, spike_mask=z, grad_mask=z, upper_grad_mask=z)
    rep = be_cycles(work)
    assert rep.ops.get("be.macs", 0) == 0
    assert rep.compute_cycles == 16 + 1  # 256 mask bits at 16 per cycle, then sync


def test_be_dense_masks_match_baseline_work(ref_plan):
    small = build_plan(parse_network("8C3-8C3", (8, 16, 16), timesteps=1, sub_batch=1))
    ones = np.ones((1, 1, 8, 16, 16), bool)
    work = LayerWorkload(small[0], small[1], 1, 1, spike_mask=ones, grad_mask=ones, upper_grad_mask=ones)
    sparse = be_cycles(work)
    dense = be_cycles(work, BE_DEFAULT.with_(baseline=True))
    assert sparse.ops["be.macs"] == dense.ops["be.macs"]


def test_glb_overflow_is_reported(ref_plan):
    work = synthetic_workloads(ref_plan, 4, 10)[1]
    with pytest.raises(ConfigurationError, match="GLB"):
        fe_cycles(work, FE_DEFAULT.with_(glb_bytes=1024))


def test_bound_monotone_in_bandwidth_and_parallelism(ref_plan):
    work = synthetic_workloads(ref_plan, 4, 10, [[0.75, 0.75], [0.75, 0.75]])[1]
    prev = None
    for bw in (16e9, 32e9, 64e9, 128e9, 256e9):
        cyc = fe_cycles(work, FE_DEFAULT, MemoryConfig(bytes_per_sec=bw)).bound_cycles
        assert prev is None or cyc <= prev
        prev = cyc
    prev = None
    for par in (1, 2, 4, 8):
        cyc = wue_cycles(work, WUE_DEFAULT.with_(parallelism=par)).bound_cycles
        assert prev is None or cyc <= prev
        prev = cyc


def test_fc_layer_counts_flattened_inputs():
    plan = build_plan(parse_network("4C3-AP2-10FC", (2, 8, 8), timesteps=2, sub_batch=1))
    work = synthetic_workloads(plan, 1, 2)[1]
    # pooled inputs are real-valued, so the dense path counts every flattened input
    assert fe_cycles(work).ops["fe.macs"] == 2 * 4 * 4 * 4 * 10
    plan = build_plan(parse_network("4C3-10FC", (2, 8, 8), timesteps=2, sub_batch=1))
    work = synthetic_workloads(plan, 1, 2)[1]
    assert fe_cycles(work).ops["fe.lut_reads"] == 2 * 4 * 8 * 8 * 10
    assert wue_cycles(work).ops["wue.lut_reads"] == 2 * 4 * 8 * 8 * 10
