"""One training iteration through workloads, cycle model, schedule and cost.

``replay`` mode runs the golden model on random weights and inputs and
feeds the recorded masks to the cycle model; ``synthetic`` mode draws
masks from per-layer sparsity fractions.
"""

from __future__ import annotations

import csv
import itertools
import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .config import RunConfig
from .core import build_plan, init_weights, train_step
from .cost import CATEGORIES, EnergyReport, lut_storage_report, tally_energy
from .cycles import (LayerCycleReport, be_cycles, fe_cycles, replay_counters, synthetic_workloads,
                     wue_cycles, workloads_from_records)
from .errors import ConfigurationError
from .pipeline import ENGINES, ScheduleReport, schedule_training_step

log = logging.getLogger(__name__)

REPORT_SCHEMA = "h2sim.report/1"


@dataclass
class SimulationResult:
    config: RunConfig
    layer_names: List[str]
    per_sub_batch: List[List[Dict[str, LayerCycleReport]]]
    schedule: ScheduleReport
    energy: EnergyReport
    counts: Counter
    loss: Optional[float] = None
    replay_match: Optional[bool] = None
    notes: List[str] = field(default_factory=list)

    def layer_totals(self) -> List[Dict[str, LayerCycleReport]]:
        """Per-layer reports summed over the sub-batches of the group."""
        out = []
        for j in range(len(self.layer_names)):
            out.append({e: merge_reports([sub[j][e] for sub in self.per_sub_batch]) for e in ENGINES})
        return out

    def engine_cycles(self) -> Dict[str, int]:
        return dict(self.schedule.busy_cycles)

    def to_report(self) -> dict:
        layers = []
        for j, (name, reps) in enumerate(zip(self.layer_names, self.layer_totals())):
            layers.append({"index": j, "layer": name, **{e: reps[e].to_dict() for e in ENGINES}})
        report = {
            "schema": REPORT_SCHEMA,
            "config_hash": self.config.hash,
            "config": self.config.to_dict(),
            "network": self.config.network_spec().describe(),
            "mode": self.config.mode,
            "layers": layers,
            "schedule": self.schedule.to_dict(),
            "energy": self.energy.to_dict(),
            "op_counts": dict(sorted(self.counts.items())),
            "lut_storage_bytes": lut_storage_report(self.config.engine_configs().values()),
            "notes": list(self.notes),
        }
        if self.loss is not None:
            report["loss"] = self.loss
        if self.replay_match is not None:
            report["replay_counts_match"] = self.replay_match
        return report


def merge_reports(reports: Sequence[LayerCycleReport]) -> LayerCycleReport:
    first = reports[0]
    out = LayerCycleReport(first.engine, first.layer)
    ops, traffic = Counter(), Counter()
    for r in reports:
        out.compute_cycles += r.compute_cycles
        out.unit_cycles += r.unit_cycles
        out.memory_cycles += r.memory_cycles
        out.grid_iterations += r.grid_iterations
        ops.update(r.ops)
        traffic.update(r.traffic)
        out.flags.extend(f for f in r.flags if f not in out.flags)
    out.ops = dict(sorted(ops.items()))
    out.traffic = dict(sorted(traffic.items()))
    return out


def _random_batch(cfg: RunConfig, net, plan, rng):
    n = net.batch_size
    if plan[0].spec.is_encoding:
        batch = rng.random((n, *net.input_shape)).astype(np.float32)
    else:
        batch = (rng.random((n, net.timesteps, *net.input_shape)) < cfg.input_rate).astype(np.float32)
    return batch, rng.integers(0, plan[-1].out_shape[0], n)


def _layer_reports(works, engines, mem, cfg: RunConfig) -> List[Dict[str, LayerCycleReport]]:
    out = []
    for j, work in enumerate(works):
        out.append({
            "FE": fe_cycles(work, engines["FE"], mem),
            "BE": be_cycles(work, engines["BE"], mem, samples=cfg.samples, seed=cfg.seed + j),
            "WUE": wue_cycles(work, engines["WUE"], mem),
        })
    return out


def simulate(cfg: RunConfig) -> SimulationResult:
    net = cfg.network_spec()
    plan = build_plan(net)
    engines = cfg.engine_configs()
    mem = cfg.memory_config()
    notes = []
    loss = replay_match = None

    if cfg.mode == "replay":
        rng = np.random.default_rng(cfg.seed)
        weights = init_weights(net, cfg.seed, cfg.weight_gain)
        batch, labels = _random_batch(cfg, net, plan, rng)
        result = train_step(net, batch, labels, weights, lr=cfg.lr)
        loss = float(result.loss)
        per_sub = [_layer_reports(workloads_from_records(plan, rec), engines, mem, cfg)
                   for rec in result.records]
        expected = replay_counters(result.records, plan)
    else:
        if cfg.sparsity is not None and len(cfg.sparsity) > len(plan):
            raise ConfigurationError(f"{len(cfg.sparsity)} sparsity entries for {len(plan)} weight layers")
        works = synthetic_workloads(plan, net.sub_batch, net.timesteps, cfg.sparsity)
        per_sub = [_layer_reports(works, engines, mem, cfg)] * net.batch_group
        expected = None
        given = list(cfg.sparsity or [])
        dense = [j for j in range(len(plan)) if j >= len(given) or given[j] is None]
        if dense:
            notes.append(f"layers {dense} have no sparsity entry and are modelled dense")

    counts = Counter()
    traffic = Counter()
    for sub in per_sub:
        for layer in sub:
            for engine, rep in layer.items():
                counts.update(rep.ops)
                traffic[engine] += sum(rep.traffic.values())
    if expected is not None:
        # Apply-free op counts must equal the closed-form replay of the functional engines.
        replayed = Counter()
        for c in expected:
            replayed.update(c)
        replayed.pop("wue.apply_ops", None)
        modelled = Counter({k: v for k, v in counts.items() if v})
        replay_match = modelled == replayed
        if not replay_match:
            log.warning("cycle-model op counts differ from replayed engine counts")

    n_weights = sum(int(np.prod(layer.connection.weight_shape)) for layer in plan)
    counts["wue.apply_ops"] += n_weights
    traffic["WUE"] += 3 * 2 * n_weights  # read weight and gradient, write weight (FP16)
    apply_cycles = math.ceil(n_weights / engines["WUE"].units)
    schedule = schedule_training_step(per_sub, net.sub_batch, net.batch_group, apply_cycles)
    leakage_cycles = {e: schedule.total_cycles for e in ENGINES}
    energy = tally_energy(counts, leakage_cycles, cfg.cost_constants(), dram_bytes=traffic)
    names = [str(layer.spec) for layer in plan]
    return SimulationResult(cfg, names, per_sub, schedule, energy, counts, loss, replay_match, notes)


# --------------------------------------------------------------------------
# output files
# --------------------------------------------------------------------------

def write_json(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    return path


def layer_rows(res: SimulationResult) -> List[dict]:
    rows = []
    for j, (name, reps) in enumerate(zip(res.layer_names, res.layer_totals())):
        for e in ENGINES:
            r = reps[e]
            rows.append({"layer": j, "name": name, "engine": e, "compute_cycles": r.compute_cycles,
                         "unit_cycles": r.unit_cycles, "memory_cycles": r.memory_cycles,
                         "bound_cycles": r.bound_cycles, "bound_by": r.bound_by})
    return rows


def write_csv(path: Path, rows: List[dict], columns: Sequence[str]) -> Path:
    with path.open("w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return path


def run_simulate(cfg: RunConfig, out: Path, figures: Optional[bool] = None) -> SimulationResult:
    out.mkdir(parents=True, exist_ok=True)
    res = simulate(cfg)
    write_json(out / "report.json", res.to_report())
    rows = layer_rows(res)
    write_csv(out / "layers.csv", rows, list(rows[0]))
    if cfg.figures if figures is None else figures:
        from .plotting import plot_energy, plot_layer_cycles
        plot_layer_cycles(res, out / "cycles_by_layer.png")
        plot_energy(res, out / "energy_breakdown.png")
    return res


# --------------------------------------------------------------------------
# sweeps
# --------------------------------------------------------------------------

def sweep_points(cfg: RunConfig) -> List[Dict[str, object]]:
    if not cfg.sweep:
        raise ConfigurationError("sweep needs a non-empty 'sweep' object of parameter lists")
    keys = list(cfg.sweep)
    return [dict(zip(keys, combo)) for combo in itertools.product(*(cfg.sweep[k] for k in keys))]


def _run_point(args):
    base, point = args
    cfg = RunConfig.from_dict({**base, "sweep": {}}).with_overrides(list(point.items()))
    res = simulate(cfg)
    return sweep_row(point, res)


def sweep_row(point: Dict[str, object], res: SimulationResult) -> dict:
    row = dict(point)
    busy = res.schedule.busy_cycles
    for e in ENGINES:
        row[f"{e.lower()}_cycles"] = busy[e]
    row["total_cycles"] = res.schedule.total_cycles
    comps = res.energy.components
    for c in CATEGORIES:
        row[f"energy_{c}"] = comps[c]
    row["energy_total"] = res.energy.total
    row["config_hash"] = res.config.hash
    return row


def sweep(cfg: RunConfig, jobs: int = 1) -> List[dict]:
    points = sweep_points(cfg)
    base = cfg.to_dict()
    args = [(base, p) for p in points]
    rows = []
    if jobs > 1 and len(points) > 1:
        from concurrent.futures import ProcessPoolExecutor
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_run_point, args))
    else:
        results = []
        for i, a in enumerate(args):
            try:
                results.append(_run_point(a))
            except ConfigurationError as exc:
                raise ConfigurationError(f"sweep point {i} {a[1]}: {exc}") from None
    for i, row in enumerate(results):
        rows.append({"point": i, **row})
    return rows


def sweep_columns(cfg: RunConfig) -> List[str]:
    return (["point", *cfg.sweep, *(f"{e.lower()}_cycles" for e in ENGINES), "total_cycles"]
            + [f"energy_{c}" for c in CATEGORIES] + ["energy_total", "config_hash"])


def run_sweep(cfg: RunConfig, out: Path, jobs: int = 1, figures: Optional[bool] = None) -> List[dict]:
    out.mkdir(parents=True, exist_ok=True)
    rows = sweep(cfg, jobs)
    cols = sweep_columns(cfg)
    csv_rows = [{k: (json.dumps(v) if isinstance(v, (list, dict)) else v) for k, v in r.items()} for r in rows]
    write_csv(out / "sweep.csv", csv_rows, cols)
    write_json(out / "sweep.json", {"schema": "h2sim.sweep/1", "config_hash": cfg.hash,
                                    "config": cfg.to_dict(), "points": rows})
    if cfg.figures if figures is None else figures:
        from .plotting import plot_sweep
        plot_sweep(rows, list(cfg.sweep), out / "sweep.png")
    return rows
