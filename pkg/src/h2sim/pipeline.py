"""Schedule of one training iteration across the three engines.

The Forward Engine works on sub-batch ``i + 1`` while the Backward and
Weight Update Engines finish sub-batch ``i``.  Inside a sub-batch the
backward work runs top layer first; the Weight Update Engine takes layer
``j`` as soon as the Backward Engine has produced that layer's potential
gradients.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Sequence, Union

from .errors import ConfigurationError

ENGINES = ("FE", "BE", "WUE")


@dataclass
class SubBatchTiming:
    fe: int
    be: int
    wue: int
    bw: int


@dataclass
class ScheduleReport:
    total_cycles: int
    sequential_cycles: int
    busy_cycles: Dict[str, int]
    apply_cycles: int
    stages: List[dict] = field(default_factory=list)

    @property
    def utilization(self) -> Dict[str, float]:
        if self.total_cycles == 0:
            return {e: 0.0 for e in self.busy_cycles}
        return {e: busy / self.total_cycles for e, busy in self.busy_cycles.items()}

    @property
    def speedup_over_sequential(self) -> float:
        return self.sequential_cycles / self.total_cycles if self.total_cycles else 1.0

    def to_dict(self) -> dict:
        return {
            "total_cycles": self.total_cycles,
            "sequential_cycles": self.sequential_cycles,
            "busy_cycles": dict(self.busy_cycles),
            "utilization": self.utilization,
            "apply_cycles": self.apply_cycles,
            "stages": list(self.stages),
        }


LayerCycles = Mapping[str, Union[int, object]]


def _cycles(entry, engine, layer):
    if engine not in entry or entry[engine] is None:
        raise ConfigurationError(f"layer {layer}: missing {engine} cycle report")
    value = entry[engine]
    value = getattr(value, "bound_cycles", value)
    if value < 0:
        raise ConfigurationError(f"layer {layer}: negative {engine} cycles")
    return int(value)


def backward_span(layers: Sequence[LayerCycles]) -> SubBatchTiming:
    """Fold per-layer BE and WUE cycles of one sub-batch into its backward span."""
    fe = sum(_cycles(e, "FE", j) for j, e in enumerate(layers))
    be_end = wue_end = 0
    be_total = wue_total = 0
    for j in reversed(range(len(layers))):
        be = _cycles(layers[j], "BE", j)
        wue = _cycles(layers[j], "WUE", j)
        be_end += be
        wue_end = max(wue_end, be_end) + wue
        be_total += be
        wue_total += wue
    return SubBatchTiming(fe, be_total, wue_total, max(be_end, wue_end))


def schedule_training_step(per_layer: Sequence, sub_batch: int = 4, batch_group: int = 1,
                           apply_cycles: int = 0) -> ScheduleReport:
    """Pipelined cycle count of one batch group.

    ``per_layer`` is either one list of per-layer ``{"FE", "BE", "WUE"}``
    entries (values are cycle counts or reports with ``bound_cycles``),
    reused for every sub-batch, or a list of such lists, one per sub-batch.
    """
    if sub_batch < 1 or batch_group < 1:
        raise ConfigurationError("sub_batch and batch_group must be >= 1")
    if apply_cycles < 0:
        raise ConfigurationError("apply cycles cannot be negative")
    if not per_layer:
        raise ConfigurationError("no layer reports to schedule")
    if isinstance(per_layer[0], Mapping):
        timings = [backward_span(per_layer)] * batch_group
    else:
        if len(per_layer) != batch_group:
            raise ConfigurationError(f"{len(per_layer)} sub-batch reports for batch group {batch_group}")
        timings = [backward_span(layers) for layers in per_layer]

    stages = [{"stage": 0, "FE": timings[0].fe, "BW": 0, "cycles": timings[0].fe, "bound_by": "FE"}]
    total = timings[0].fe
    for i in range(1, batch_group):
        fe, bw = timings[i].fe, timings[i - 1].bw
        step = max(fe, bw)
        stages.append({"stage": i, "FE": fe, "BW": bw, "cycles": step, "bound_by": "FE" if fe >= bw else "BW"})
        total += step
    last = timings[-1].bw
    stages.append({"stage": batch_group, "FE": 0, "BW": last, "cycles": last, "bound_by": "BW"})
    total += last + apply_cycles

    busy = {
        "FE": sum(t.fe for t in timings),
        "BE": sum(t.be for t in timings),
        "WUE": sum(t.wue for t in timings) + apply_cycles,
    }
    sequential = sum(t.fe + t.bw for t in timings) + apply_cycles
    return ScheduleReport(total, sequential, busy, apply_cycles, stages)
