"""Client-to-tier mapping and heterogeneity diagnostics.

The Dirichlet mapping walks items from most to least clicked, draws a
3-way probability vector per item, and assigns each not-yet-seen clicker
of the item by thresholding a uniform draw.  Small concentration values
push each item's clickers into a single tier, which couples a client's
device tier to what it clicks; large values approach a random mapping.
"""

from __future__ import annotations

import csv
import enum
import os
from dataclasses import dataclass

import numpy as np

from .data import Dataset
from .rng import dirichlet3


class Tier(enum.Enum):
    LOW = "low"
    MID = "mid"
    HIGH = "high"


TIERS = (Tier.LOW, Tier.MID, Tier.HIGH)

RANDOM = "random"
DIRICHLET = "dirichlet"


@dataclass
class TierAssignment:
    tier_of: dict[str, Tier]
    method: str
    alpha: float | None
    seed: int
    balanced: bool

    def tier_sizes(self) -> dict[Tier, int]:
        sizes = {t: 0 for t in TIERS}
        for t in self.tier_of.values():
            sizes[t] += 1
        return sizes

    def clients_in(self, tier: Tier) -> list[str]:
        return [cid for cid, t in self.tier_of.items() if t is tier]


@dataclass
class HeterogeneityReport:
    top_items: list[int]
    per_tier_item_freq: dict[Tier, list[int]]  # aligned with top_items
    tv_distance: float
    tier_sizes: dict[Tier, int]
    degenerate_tiers: list[Tier]


def _clicker_sets(dataset: Dataset) -> dict[int, list[str]]:
    """Distinct clients with a click (label 1) per item, sorted for determinism."""
    clickers: dict[int, set[str]] = {i: set() for i in range(dataset.schema.n_items)}
    for it in dataset.all_interactions():
        if it.label == 1:
            clickers[it.item_id].add(it.client_id)
    return {i: sorted(users) for i, users in clickers.items()}


def dirichlet_tier_map(
    dataset: Dataset, alpha: float, seed: int, balanced: bool = True
) -> TierAssignment:
    """Popularity-ordered Dirichlet tier mapping.

    With ``balanced`` the three probabilities are sorted descending and the
    tiers descending by current size, so the largest probability lands on
    the currently smallest tier; without it each user is assigned by the
    raw (p0, p1, p2) thresholds.  Users who clicked nothing are processed
    last as clickers of a single synthetic null item.  A user's tier is
    fixed by the most popular item they clicked and never reassigned.
    """
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    if dataset.n_clients == 0:
        raise ValueError("empty dataset")

    rng = np.random.default_rng(seed)
    clickers = _clicker_sets(dataset)
    tiers: list[list[str]] = [[], [], []]
    assigned: dict[str, int] = {}

    def assign_batch(users: list[str], p: np.ndarray) -> None:
        if balanced:
            p_order = np.argsort(-p, kind="stable")  # largest probability first
            p_sorted = p[p_order]
            size_order = sorted(range(3), key=lambda t: (-len(tiers[t]), t))
            # threshold order: largest prob -> smallest tier
            targets = [size_order[2], size_order[1], size_order[0]]
        else:
            p_sorted = p
            targets = [0, 1, 2]
        t1 = p_sorted[0]
        t2 = p_sorted[0] + p_sorted[1]
        for user in users:
            if user in assigned:
                continue
            r = rng.random()
            if r < t1:
                idx = targets[0]
            elif r < t2:
                idx = targets[1]
            else:
                idx = targets[2]
            tiers[idx].append(user)
            assigned[user] = idx

    for item in dataset.items_by_popularity():
        p = dirichlet3(rng, alpha)
        assign_batch(clickers[item], p)

    never_clicked = [cid for cid in dataset.clients if cid not in assigned]
    if never_clicked:
        p = dirichlet3(rng, alpha)
        assign_batch(never_clicked, p)

    tier_of = {cid: TIERS[idx] for cid, idx in assigned.items()}
    tier_of = {cid: tier_of[cid] for cid in dataset.clients}
    return TierAssignment(tier_of, DIRICHLET, alpha, seed, balanced)


def random_tier_map(dataset: Dataset, seed: int) -> TierAssignment:
    """Each client independently uniform over the three tiers."""
    if dataset.n_clients == 0:
        raise ValueError("empty dataset")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, 3, size=dataset.n_clients)
    tier_of = {cid: TIERS[draws[i]] for i, cid in enumerate(sorted(dataset.clients))}
    tier_of = {cid: tier_of[cid] for cid in dataset.clients}
    return TierAssignment(tier_of, RANDOM, None, seed, balanced=False)


def heterogeneity_report(
    dataset: Dataset, assignment: TierAssignment, top_k: int = 10
) -> HeterogeneityReport:
    """Per-tier clicker counts for the top-K items plus a skew scalar.

    tv_distance is the mean, over pairs of non-degenerate tiers, of the
    total-variation distance between per-tier item-clicker distributions
    taken over the full item vocabulary.
    """
    missing = set(dataset.clients) - set(assignment.tier_of)
    if missing:
        raise ValueError(f"assignment does not cover clients {sorted(missing)[:5]}")

    n_items = dataset.schema.n_items
    counts = {t: np.zeros(n_items, dtype=np.int64) for t in TIERS}
    for item, users in _clicker_sets(dataset).items():
        for user in users:
            counts[assignment.tier_of[user]][item] += 1

    degenerate = [t for t in TIERS if counts[t].sum() == 0]
    live = [t for t in TIERS if counts[t].sum() > 0]
    dists = {t: counts[t] / counts[t].sum() for t in live}
    pair_tvs = [
        0.5 * float(np.abs(dists[a] - dists[b]).sum())
        for i, a in enumerate(live)
        for b in live[i + 1:]
    ]
    tv = float(np.mean(pair_tvs)) if pair_tvs else 0.0

    top_items = dataset.items_by_popularity()[:top_k]
    freq = {t: [int(counts[t][i]) for i in top_items] for t in TIERS}
    return HeterogeneityReport(
        top_items=top_items,
        per_tier_item_freq=freq,
        tv_distance=tv,
        tier_sizes=assignment.tier_sizes(),
        degenerate_tiers=degenerate,
    )


def write_assignment_csv(assignment: TierAssignment, path: str | os.PathLike) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["client_id", "tier"])
        for cid, tier in assignment.tier_of.items():
            writer.writerow([cid, tier.value])


def read_assignment_csv(path: str | os.PathLike) -> dict[str, Tier]:
    by_value = {t.value: t for t in TIERS}
    tier_of: dict[str, Tier] = {}
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"client_id", "tier"}:
            raise ValueError(f"{path}: expected columns client_id, tier")
        for row in reader:
            tier_of[row["client_id"]] = by_value[row["tier"]]
    return tier_of


def write_heterogeneity_csv(report: HeterogeneityReport, path: str | os.PathLike) -> None:
    """Top-K rows of per-tier clicker counts plus a tv_distance summary row."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["item_id", "count_low", "count_mid", "count_high"])
        for pos, item in enumerate(report.top_items):
            writer.writerow(
                [item] + [report.per_tier_item_freq[t][pos] for t in TIERS]
            )
        writer.writerow(["tv_distance", repr(report.tv_distance), "", ""])
