import pytest

from h2sim.cost import CostConstants, lut_storage_report, tally_energy
from h2sim.cycles import BE_DEFAULT, FE_DEFAULT, WUE_DEFAULT
from h2sim.errors import ConfigurationError


def test_tally_categories():
    k = CostConstants(lut_read=2.0, fp16_mac=3.0, dram_byte=5.0, glb_byte=1.0, leak_be=0.5)
    rep = tally_energy({"fe.lut_reads": 10, "be.macs": 4}, {"BE": 100}, k, {"FE": 8})
    assert rep.by_engine["FE"]["pe_array"] == 20
    assert rep.by_engine["BE"]["pe_array"] == 12
    assert rep.by_engine["FE"]["dram"] == 40 and rep.by_engine["FE"]["glb"] == 16
    assert rep.by_engine["BE"]["leakage"] == 50
    assert rep.total == pytest.approx(20 + 12 + 40 + 16 + 50)


def test_energy_is_linear_in_counts():
    k = CostConstants()
    one = tally_energy({"wue.adds": 3, "be.tags": 2}, {}, k).total
    two = tally_energy({"wue.adds": 6, "be.tags": 4}, {}, k).total
    assert two == 2 * one


def test_unknown_op_or_constant():
    with pytest.raises(ConfigurationError):
        tally_energy({"fe.teleports": 1}, {}, CostConstants())
    with pytest.raises(ConfigurationError):
        CostConstants.from_dict({"flux": 1.0})
    with pytest.raises(ConfigurationError):
        CostConstants(fp16_add=-1.0)


def test_lut_storage_defaults():
    assert lut_storage_report([FE_DEFAULT, WUE_DEFAULT, BE_DEFAULT]) == {"FE": 49152, "WUE": 81920}


def test_unit_constants_sum_ops_and_cycles():
    counts = {"fe.lut_reads": 7, "be.macs": 5, "wue.apply_ops": 3}
    rep = tally_energy(counts, {"FE": 11, "BE": 13}, CostConstants())
    assert rep.total == 7 + 5 + 3 + 11 + 13
    zero_leak = CostConstants(leak_fe=0, leak_be=0, leak_wue=0)
    assert tally_energy(counts, {"FE": 1}, zero_leak).total == tally_energy(counts, {"FE": 10**6}, zero_leak).total


def test_halving_entries_halves_bytes():
    assert FE_DEFAULT.with_(sublut_entries=4).lut_bytes * 2 == FE_DEFAULT.lut_bytes


def test_components_sum_to_total():
    rep = tally_energy({"fe.adds": 3, "be.tags": 9}, {"WUE": 4}, CostConstants(glb_byte=0.5), {"BE": 10})
    assert sum(rep.components.values()) == rep.total


def test_be_energy_saving_at_reference_sparsity():
    from h2sim.core import build_plan
    from h2sim.cycles import be_cycles, synthetic_workloads
    from h2sim.network import parse_network
    plan = build_plan(parse_network("256C3-256C3", (256, 56, 56), timesteps=10))
    work = synthetic_workloads(plan, 4, 10, [[0.75, 0.75], [0.75, 0.75]])[0]
    k = CostConstants()

    def energy(rep):
        return tally_energy(rep.ops, {"BE": rep.bound_cycles}, k, {"BE": sum(rep.traffic.values())}).total

    ratio = energy(be_cycles(work, BE_DEFAULT.with_(baseline=True))) / energy(be_cycles(work, samples=2))
    assert ratio >= 4
