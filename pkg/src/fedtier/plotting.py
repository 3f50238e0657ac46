"""Figure rendering for the report paths.

Figures are companions to the CSV outputs, never the canonical record:
per-tier item-frequency bars for a heterogeneity report, per-tier relative
accuracy change bars for a fairness report, and an MDAC summary grouped by
mapping for a full experiment.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .metrics import FairnessReport
from .tiering import TIERS, HeterogeneityReport

_TIER_COLORS = {"low": "#d62728", "mid": "#ff7f0e", "high": "#2ca02c"}


def save_heterogeneity_figure(
    report: HeterogeneityReport, path: str | Path, title: str | None = None
) -> Path:
    """Grouped bars: per-tier clicker counts for the top-K items."""
    path = Path(path)
    items = report.top_items
    x = np.arange(len(items))
    width = 0.27
    fig, ax = plt.subplots(figsize=(8, 4))
    for k, tier in enumerate(TIERS):
        ax.bar(
            x + (k - 1) * width,
            report.per_tier_item_freq[tier],
            width,
            label=tier.value,
            color=_TIER_COLORS[tier.value],
        )
    ax.set_xticks(x)
    ax.set_xticklabels([str(i) for i in items], rotation=45, ha="right")
    ax.set_xlabel("item id (most clicked first)")
    ax.set_ylabel("distinct clickers")
    if title:
        ax.set_title(title)
    ax.legend(title=f"tv distance: {report.tv_distance:.3f}")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_fairness_figure(
    report: FairnessReport, path: str | Path, title: str | None = None
) -> Path:
    """Per-tier relative accuracy change in percent, MDAC annotated."""
    path = Path(path)
    tiers = [t for t in TIERS if t in report.rel_change_per_tier]
    values = [100.0 * report.rel_change_per_tier[t] for t in tiers]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.bar(
        [t.value for t in tiers],
        values,
        color=[_TIER_COLORS[t.value] for t in tiers],
    )
    ax.axhline(0.0, color="black", linewidth=0.8)
    ax.set_ylabel("relative AUC change (%)")
    ax.set_title(title or "per-tier accuracy change")
    ax.text(
        0.02,
        0.02,
        f"MDAC: {100.0 * report.mdac:.2f}%",
        transform=ax.transAxes,
        fontsize=10,
    )
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def save_mdac_summary_figure(rows, path: str | Path) -> Path:
    """MDAC per (mapping, optimization) cell, seeds shown as scatter."""
    path = Path(path)
    cells: dict[tuple[str, str], list[float]] = {}
    for row in rows:
        if row.report is None:
            continue
        cells.setdefault((row.mapping, row.optimization), []).append(row.report.mdac)
    fig, ax = plt.subplots(figsize=(max(5, 1.2 * len(cells) + 2), 4))
    labels = []
    for i, ((mapping, opt), values) in enumerate(sorted(cells.items())):
        values = np.asarray(values)
        ax.bar(i, 100.0 * float(np.median(values)), color="#1f77b4", width=0.6)
        ax.scatter([i] * len(values), 100.0 * values, color="black", s=12, zorder=3)
        labels.append(f"{mapping}\n{opt}")
    ax.set_xticks(range(len(labels)))
    ax.set_xticklabels(labels, fontsize=8)
    ax.set_ylabel("MDAC (%)")
    ax.set_title("fairness impact by mapping (bar = median over seeds)")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
