"""ROC-AUC (global and per tier), relative accuracy change, and MDAC.

MDAC is the maximum absolute difference, over tier pairs, of the relative
accuracy change each tier sees between a baseline and a treatment run:
zero means the treatment helps or harms every tier equally.
"""

from __future__ import annotations

import csv
import os
import warnings
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .data import Dataset
from .model import ModelParams, forward
from .tiering import TIERS, Tier, TierAssignment

_SCORE_CHUNK = 8192


def auc(labels, scores) -> float | None:
    """Mann-Whitney AUC via rank sums, ties handled by average ranks.

    Returns None when only one class is present (AUC undefined).
    """
    labels = np.asarray(labels, dtype=np.float64)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape:
        raise ValueError(f"length mismatch: {labels.shape} vs {scores.shape}")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos + n_neg != labels.size:
        raise ValueError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(scores)
    pos_rank_sum = float(ranks[labels == 1].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def _average_ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks; tied values share the average of their rank range."""
    order = np.argsort(x, kind="mergesort")
    sx = x[order]
    boundary = np.r_[True, sx[1:] != sx[:-1]]
    group = np.cumsum(boundary) - 1
    counts = np.bincount(group)
    ends = np.cumsum(counts)
    avg = ends - (counts - 1) / 2.0  # mean of [end-count+1, end]
    ranks = np.empty_like(x)
    ranks[order] = avg[group]
    return ranks


@dataclass
class TierAUC:
    auc_total: float | None
    auc_per_tier: dict[Tier, float | None]
    n_test_per_tier: dict[Tier, int]


def per_tier_auc(
    params: ModelParams, dataset: Dataset, assignment: TierAssignment
) -> TierAUC:
    """Score every client's test interactions and compute AUC per tier group."""
    missing = set(dataset.clients) - set(assignment.tier_of)
    if missing:
        raise ValueError(f"assignment does not cover clients {sorted(missing)[:5]}")
    interactions = []
    tiers = []
    for cid, client in dataset.clients.items():
        t = assignment.tier_of[cid]
        for it in client.test:
            interactions.append(it)
            tiers.append(t)
    if not interactions:
        raise ValueError("dataset has no test interactions")

    scores = np.empty(len(interactions))
    for start in range(0, len(interactions), _SCORE_CHUNK):
        chunk = interactions[start : start + _SCORE_CHUNK]
        scores[start : start + len(chunk)] = forward(params, chunk)
    labels = np.array([it.label for it in interactions], dtype=np.float64)
    tiers_arr = np.array([TIERS.index(t) for t in tiers])

    per_tier: dict[Tier, float | None] = {}
    n_test: dict[Tier, int] = {}
    for idx, tier in enumerate(TIERS):
        sel = tiers_arr == idx
        n_test[tier] = int(sel.sum())
        per_tier[tier] = auc(labels[sel], scores[sel]) if n_test[tier] else None
    return TierAUC(auc(labels, scores), per_tier, n_test)


@dataclass
class FairnessReport:
    rel_change_per_tier: dict[Tier, float]
    mdac: float
    baseline_id: str = ""
    treatment_id: str = ""
    excluded_tiers: list[Tier] = field(default_factory=list)
    baseline_auc: dict[Tier, float] = field(default_factory=dict)
    treatment_auc: dict[Tier, float] = field(default_factory=dict)


def fairness(
    baseline: TierAUC,
    treatment: TierAUC,
    baseline_id: str = "baseline",
    treatment_id: str = "treatment",
) -> FairnessReport:
    """Relative per-tier accuracy change and its max cross-tier spread (MDAC).

    rel_change(t) = (treatment_auc(t) - baseline_auc(t)) / baseline_auc(t);
    mdac = max over distinct tier pairs of |rel_change(ti) - rel_change(tj)|.
    Tiers with undefined AUC in either run are excluded with a warning.
    """
    excluded = []
    rel: dict[Tier, float] = {}
    base: dict[Tier, float] = {}
    treat: dict[Tier, float] = {}
    for t in TIERS:
        b = baseline.auc_per_tier.get(t)
        p = treatment.auc_per_tier.get(t)
        if b is None or p is None:
            excluded.append(t)
            continue
        if b <= 0:
            raise ValueError(f"baseline AUC for tier {t.value} must be > 0, got {b}")
        rel[t] = (p - b) / b
        base[t] = b
        treat[t] = p
    if len(rel) < 2:
        raise ValueError(
            f"fewer than two comparable tiers (excluded: {[t.value for t in excluded]})"
        )
    if excluded:
        warnings.warn(
            f"tiers excluded from MDAC (undefined AUC): {[t.value for t in excluded]}",
            stacklevel=2,
        )
    mdac = max(abs(rel[a] - rel[b]) for a, b in combinations(rel, 2))
    return FairnessReport(
        rel_change_per_tier=rel,
        mdac=mdac,
        baseline_id=baseline_id,
        treatment_id=treatment_id,
        excluded_tiers=excluded,
        baseline_auc=base,
        treatment_auc=treat,
    )


def write_fairness_csv(report: FairnessReport, path: str | os.PathLike) -> None:
    """Per-tier rows (tier, baseline_auc, treatment_auc, rel_change) + mdac row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tier", "baseline_auc", "treatment_auc", "rel_change"])
        for t in TIERS:
            if t in report.rel_change_per_tier:
                writer.writerow(
                    [
                        t.value,
                        repr(report.baseline_auc[t]),
                        repr(report.treatment_auc[t]),
                        repr(report.rel_change_per_tier[t]),
                    ]
                )
            else:
                writer.writerow([t.value, "", "", ""])
        writer.writerow(["mdac", "", "", repr(report.mdac)])


def write_tier_auc_csv(tier_auc: TierAUC, path: str | os.PathLike) -> None:
    """Long-format per-tier AUC: tier, auc, n_test (plus a total row)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tier", "auc", "n_test"])
        for t in TIERS:
            value = tier_auc.auc_per_tier[t]
            writer.writerow(
                [t.value, "" if value is None else repr(value), tier_auc.n_test_per_tier[t]]
            )
        total = tier_auc.auc_total
        writer.writerow(
            ["total", "" if total is None else repr(total), sum(tier_auc.n_test_per_tier.values())]
        )
