"""Figures written next to the JSON/CSV output (Agg backend, no timestamps)."""

from __future__ import annotations

from pathlib import Path
from typing import List, Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .cost import CATEGORIES  # noqa: E402
from .pipeline import ENGINES  # noqa: E402

# Fixed metadata keeps repeated runs byte-identical.
PNG_METADATA = {"Software": None}


def _save(fig, path: Path) -> Path:
    fig.tight_layout()
    fig.savefig(path, dpi=100, metadata=PNG_METADATA)
    plt.close(fig)
    return path


def plot_layer_cycles(res, path: Path) -> Path:
    """Grouped bars of bound cycles per layer and engine."""
    totals = res.layer_totals()
    x = np.arange(len(totals))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6, 0.9 * len(totals)), 4))
    for i, e in enumerate(ENGINES):
        ax.bar(x + (i - 1) * width, [t[e].bound_cycles for t in totals], width, label=e)
    ax.set_xticks(x)
    ax.set_xticklabels(res.layer_names, rotation=45, ha="right", fontsize=8)
    ax.set_ylabel("cycles (all sub-batches)")
    ax.set_title(f"total {res.schedule.total_cycles:,} cycles")
    ax.legend()
    return _save(fig, path)


def plot_energy(res, path: Path) -> Path:
    """Stacked energy components per engine."""
    fig, ax = plt.subplots(figsize=(6, 4))
    bottom = np.zeros(len(ENGINES))
    for c in CATEGORIES:
        vals = np.array([res.energy.by_engine[e][c] for e in ENGINES])
        ax.bar(ENGINES, vals, bottom=bottom, label=c)
        bottom += vals
    ax.set_ylabel("energy (cost-constant units)")
    ax.legend(fontsize=8)
    return _save(fig, path)


def plot_sweep(rows: List[dict], params: Sequence[str], path: Path) -> Path:
    """Cycles per engine and in total against sweep point."""
    fig, ax = plt.subplots(figsize=(7, 4))
    x = [r["point"] for r in rows]
    for e in ENGINES:
        ax.plot(x, [r[f"{e.lower()}_cycles"] for r in rows], marker="o", label=e)
    ax.plot(x, [r["total_cycles"] for r in rows], marker="s", color="k", label="pipelined total")
    ax.set_xticks(x)
    ax.set_xticklabels([", ".join(str(r[p]) for p in params) for r in rows], rotation=30, ha="right",
                       fontsize=8)
    ax.set_xlabel(", ".join(params))
    ax.set_ylabel("cycles")
    ax.legend(fontsize=8)
    return _save(fig, path)
