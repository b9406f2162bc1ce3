import json

import pytest

from h2sim.config import RunConfig, apply_overrides
from h2sim.errors import ConfigurationError, NetworkParseError


def test_defaults_are_valid_and_hash_is_stable():
    a, b = RunConfig(), RunConfig()
    assert a.hash == b.hash and len(a.hash) == 64
    assert a.engine_configs()["FE"].pe_rows == 64


def test_override_parsing():
    cfg = RunConfig().with_overrides(["engines.be.parallelism=8", "mode=replay", "sparsity=[[0.5,0.5]]",
                                      "network=16C3-10FC"])
    assert cfg.engine_configs()["BE"].parallelism == 8
    assert cfg.mode == "replay" and cfg.sparsity == [[0.5, 0.5]] and cfg.network == "16C3-10FC"
    assert cfg.hash != RunConfig().hash


def test_nested_override_creates_keys():
    assert apply_overrides({}, ["a.b=1"]) == {"a": {"b": 1}}
    with pytest.raises(ConfigurationError):
        apply_overrides({}, ["novalue"])


@pytest.mark.parametrize("data", [
    {"bogus": 1},
    {"engines": {"fe": {"bogus": 1}}},
    {"mode": "magic"},
    {"lif": {"alpha": 2.0}},
    {"sparsity": [[1.0, 0.0]]},
    {"memory": {"channels": 0}},
    {"cost": {"fp16_add": -1}},
])
def test_invalid_configs(data):
    with pytest.raises(ConfigurationError):
        RunConfig.from_dict(data)


def test_network_errors_surface():
    with pytest.raises(NetworkParseError):
        RunConfig.from_dict({"network": "64C3-"})


def test_load(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"timesteps": 4}))
    assert RunConfig.load(path, ["seed=3"]).seed == 3
    with pytest.raises(ConfigurationError):
        RunConfig.load(tmp_path / "missing.json")
    path.write_text("{")
    with pytest.raises(ConfigurationError):
        RunConfig.load(path)
