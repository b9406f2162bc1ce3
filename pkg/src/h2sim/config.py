"""Run configuration: a JSON document plus ``key=value`` overrides.

Every hardware default is the shipped accelerator profile (three engines,
800 MHz, three 128 GB/s memory spaces).  ``RunConfig.hash`` is taken over
the canonical JSON form, so equal configurations hash equally.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, List, Optional

from .cost import CostConstants
from .cycles import BE_DEFAULT, FE_DEFAULT, WUE_DEFAULT, EngineConfig, MemoryConfig, TileSpec
from .errors import ConfigurationError
from .network import parse_network
from .tensors import LifParams, NetworkSpec

CIFAR10_NET = "64C3(Encoding)-128C3-AP2-256C3-256C3-AP2-512C3-512C3-512FC-512FC-10FC"

# Backward-pass (output, input) zero fractions of the five leading conv layers.
CIFAR10_SPARSITY = [
    [0.5406, 0.9141],
    [0.8322, 0.8389],
    [0.8022, 0.8992],
    [0.8275, 0.8863],
    [0.8724, 0.8439],
]

MODES = ("replay", "synthetic")
ENGINE_KEYS = {"fe": FE_DEFAULT, "wue": WUE_DEFAULT, "be": BE_DEFAULT}
_ENGINE_FIELDS = {f.name for f in fields(EngineConfig)} - {"kind", "tile"}


def _engine_defaults(cfg: EngineConfig) -> dict:
    d = {name: getattr(cfg, name) for name in sorted(_ENGINE_FIELDS)}
    d["tile"] = {"tile_h": cfg.tile.tile_h, "tile_w": cfg.tile.tile_w}
    return d


@dataclass
class RunConfig:
    network: str = CIFAR10_NET
    input_shape: List[int] = field(default_factory=lambda: [3, 32, 32])
    timesteps: int = 10
    sub_batch: int = 4
    batch_group: int = 1
    lif: Dict[str, float] = field(default_factory=lambda: asdict(LifParams()))
    engines: Dict[str, Dict[str, Any]] = field(
        default_factory=lambda: {k: _engine_defaults(v) for k, v in ENGINE_KEYS.items()})
    memory: Dict[str, float] = field(default_factory=lambda: asdict(MemoryConfig()))
    cost: Dict[str, float] = field(default_factory=lambda: asdict(CostConstants()))
    seed: int = 0
    mode: str = "synthetic"
    sparsity: Optional[List[Optional[List[float]]]] = None
    samples: Optional[int] = 4
    lr: float = 0.1
    weight_gain: float = 2.0
    input_rate: float = 0.3
    sweep: Dict[str, List[Any]] = field(default_factory=dict)
    figures: bool = True
    verify: Dict[str, int] = field(default_factory=lambda: {"configs": 100, "tiles": 1000, "pipeline": 200})

    def __post_init__(self):
        self.validate()

    # -- construction -----------------------------------------------------
    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "RunConfig":
        if not isinstance(d, dict):
            raise ConfigurationError("configuration must be a JSON object")
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigurationError(f"unknown configuration keys: {unknown}")
        return cls(**_merge(asdict(cls()), d, ""))

    @classmethod
    def load(cls, path, overrides=()) -> "RunConfig":
        p = Path(path)
        try:
            data = json.loads(p.read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file not found: {p}") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"{p}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
        return cls.from_dict(apply_overrides(data, overrides))

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(asdict(self))

    def canonical_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))

    @property
    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()

    def with_overrides(self, overrides) -> "RunConfig":
        return RunConfig.from_dict(apply_overrides(self.to_dict(), overrides))

    # -- derived objects --------------------------------------------------
    def validate(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.samples is not None and self.samples < 1:
            raise ConfigurationError("samples must be >= 1 or null")
        if not 0.0 <= self.input_rate <= 1.0:
            raise ConfigurationError("input_rate must lie in [0, 1]")
        if self.sparsity is not None:
            for j, entry in enumerate(self.sparsity):
                if entry is None:
                    continue
                if len(entry) != 2 or not all(0.0 <= v < 1.0 for v in entry):
                    raise ConfigurationError(f"sparsity[{j}] must be [output, input] fractions in [0, 1)")
        for key in self.sweep:
            if not isinstance(self.sweep[key], list) or not self.sweep[key]:
                raise ConfigurationError(f"sweep.{key} needs a non-empty list of values")
        self.network_spec()
        self.engine_configs()
        self.memory_config()
        self.cost_constants()

    def lif_params(self) -> LifParams:
        return _build(LifParams, self.lif, "lif")

    def network_spec(self) -> NetworkSpec:
        return parse_network(self.network, tuple(self.input_shape), self.timesteps, self.lif_params(),
                             self.sub_batch, self.batch_group)

    def engine_configs(self) -> Dict[str, EngineConfig]:
        out = {}
        for key, default in ENGINE_KEYS.items():
            d = dict(self.engines.get(key, {}))
            tile = d.pop("tile", None)
            if tile is not None:
                d["tile"] = TileSpec(**tile)
            try:
                out[default.kind] = default.with_(**d)
            except TypeError as exc:
                raise ConfigurationError(f"engines.{key}: {exc}") from None
        return out

    def memory_config(self) -> MemoryConfig:
        return _build(MemoryConfig, self.memory, "memory")

    def cost_constants(self) -> CostConstants:
        return CostConstants.from_dict(self.cost)


def _build(cls, d, name):
    try:
        return cls(**d)
    except TypeError as exc:
        raise ConfigurationError(f"{name}: {exc}") from None


def _merge(base, update, path):
    if isinstance(base, dict) and isinstance(update, dict):
        out = dict(base)
        for k, v in update.items():
            sub = f"{path}.{k}" if path else k
            if path.startswith("engines.") and path.count(".") == 1 and k not in base:
                raise ConfigurationError(f"unknown engine parameter {sub}")
            out[k] = _merge(base[k], v, sub) if k in base else v
        return out
    return copy.deepcopy(update)


def parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: Dict[str, Any], overrides) -> Dict[str, Any]:
    """Apply ``a.b.c=value`` strings (values parsed as JSON when possible)."""
    data = copy.deepcopy(data)
    for item in overrides:
        if isinstance(item, str):
            if "=" not in item:
                raise ConfigurationError(f"override {item!r} is not key=value")
            key, raw = item.split("=", 1)
            value = parse_value(raw)
        else:
            key, value = item
        parts = key.strip().split(".")
        if not all(parts):
            raise ConfigurationError(f"bad override key {key!r}")
        node = data
        for part in parts[:-1]:
            if not isinstance(node.get(part, {}), dict):
                raise ConfigurationError(f"override {key!r} descends into a non-object")
            node = node.setdefault(part, {})
        node[parts[-1]] = value
    return data
