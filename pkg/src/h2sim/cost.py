"""Energy and storage accounting from op counts, traffic and cycles.

Per-op energies are user supplied; the defaults of 1.0 are placeholders,
so results are meaningful as ratios between configurations only.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import asdict, dataclass, fields
from typing import Dict, Mapping, Optional, Sequence

from .errors import ConfigurationError


@dataclass(frozen=True)
class CostConstants:
    lut_read: float = 1.0
    fp16_add: float = 1.0
    fp16_mac: float = 1.0
    glb_byte: float = 1.0
    dram_byte: float = 1.0
    unit_op: float = 1.0
    finder_bit: float = 1.0
    leak_fe: float = 1.0
    leak_be: float = 1.0
    leak_wue: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) < 0:
                raise ConfigurationError(f"cost constant {f.name} must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "CostConstants":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown cost constants: {sorted(unknown)}")
        return cls(**d)


# op key suffix -> (report category, constant name)
OP_CLASSES = {
    "lut_reads": ("pe_array", "lut_read"),
    "macs": ("pe_array", "fp16_mac"),
    "dense_macs": ("pe_array", "fp16_mac"),
    "adds": ("acc", "fp16_add"),
    "lut_build_adds": ("acc", "fp16_add"),
    "finder_scan_bits": ("finders", "finder_bit"),
    "tags": ("finders", "finder_bit"),
    "soma_ops": ("units", "unit_op"),
    "grad_ops": ("units", "unit_op"),
    "pool_ops": ("units", "unit_op"),
    "apply_ops": ("units", "unit_op"),
    "decompressed": ("units", "unit_op"),
}

CATEGORIES = ("pe_array", "acc", "glb", "dram", "finders", "units", "leakage")
ENGINE_PREFIX = {"fe": "FE", "be": "BE", "wue": "WUE"}


@dataclass
class EnergyReport:
    by_engine: Dict[str, Dict[str, float]]

    @property
    def components(self) -> Dict[str, float]:
        out = {c: 0.0 for c in CATEGORIES}
        for parts in self.by_engine.values():
            for c, v in parts.items():
                out[c] += v
        return out

    @property
    def total(self) -> float:
        return sum(self.components.values())

    def to_dict(self) -> dict:
        return {"by_engine": self.by_engine, "components": self.components, "total": self.total}


def tally_energy(counts: Mapping[str, float], cycles: Mapping[str, float], k: CostConstants,
                 dram_bytes: Optional[Mapping[str, float]] = None) -> EnergyReport:
    """Weighted sum of op counts plus per-engine leakage.

    ``counts`` keys look like ``"be.macs"``; ``cycles`` and ``dram_bytes``
    are keyed by engine (``FE``/``BE``/``WUE``).  Each DRAM byte also
    crosses the GLB twice (fill and drain).
    """
    if k is None:
        raise ConfigurationError("cost constants are required")
    by_engine = {e: {c: 0.0 for c in CATEGORIES} for e in ENGINE_PREFIX.values()}
    for key, n in counts.items():
        prefix, _, op = key.partition(".")
        if prefix not in ENGINE_PREFIX or op not in OP_CLASSES:
            raise ConfigurationError(f"no cost constant covers op {key!r}")
        category, const = OP_CLASSES[op]
        by_engine[ENGINE_PREFIX[prefix]][category] += n * getattr(k, const)
    for engine, nbytes in (dram_bytes or {}).items():
        if engine not in by_engine:
            raise ConfigurationError(f"unknown engine {engine!r} in traffic")
        by_engine[engine]["dram"] += nbytes * k.dram_byte
        by_engine[engine]["glb"] += 2 * nbytes * k.glb_byte
    for engine, cyc in cycles.items():
        if engine not in by_engine:
            raise ConfigurationError(f"unknown engine {engine!r} in cycles")
        by_engine[engine]["leakage"] += cyc * getattr(k, f"leak_{engine.lower()}")
    return EnergyReport(by_engine)


def lut_storage_report(cfgs: Sequence) -> Dict[str, int]:
    """Sub-LUT bytes per LUT engine: ``rows * cols * subluts * entries * bytes``."""
    return {cfg.kind: cfg.lut_bytes for cfg in cfgs if cfg.kind in ("FE", "WUE")}
