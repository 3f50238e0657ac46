"""Federated training rounds with tier-aware optimizations.

One epoch visits every eligible client exactly once: clients are shuffled
once and consumed in consecutive chunks, one chunk per round.  Within a
round every client trains one full-batch SGD step from the same immutable
round-start parameters; updates are combined by coverage-aware
sample-weighted averaging and applied through a server-side optimizer.
All per-client randomness (latency, compression) comes from seeds derived
from (experiment seed, round, client), so results are independent of
execution order and worker count.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .compression import PLAIN, SIGN_MAGNITUDE, UNBIASED, PruneSpec, QuantSpec, prune, quantize
from .data import ClientDataset, Dataset
from .model import (
    GradientTensors,
    ModelConfig,
    ModelParams,
    SubModelSpec,
    embed_subgradient,
    extract_submodel,
    init,
    loss_and_grad,
)
from .rng import derive_rng, derive_seed
from .tiering import TIERS, Tier, TierAssignment

NONE = "none"
EXCLUDE_LO = "exclude_lo"
OVERSELECT = "overselect"
PRUNE = "prune"
QUANT = "quant"
QUANTS = "quants"
CHANNEL = "channel"

VARIANTS = (NONE, EXCLUDE_LO, OVERSELECT, PRUNE, QUANT, QUANTS, CHANNEL)
_PER_TIER_VARIANTS = (PRUNE, QUANT, QUANTS, CHANNEL)


@dataclass(frozen=True)
class OptimizationConfig:
    variant: str = NONE
    per_tier: Mapping[Tier, float] | None = None
    overselect_fraction: float = 0.2
    prune_rescale: bool = False
    quant_rounding: str = UNBIASED

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")
        if self.variant in _PER_TIER_VARIANTS:
            if self.per_tier is None or set(self.per_tier) != set(TIERS):
                raise ValueError(f"variant {self.variant!r} needs a value for every tier")
            lo, mid, hi = (self.per_tier[t] for t in TIERS)
            if self.variant == PRUNE:
                ok = lo >= mid >= hi
            else:  # quant bits / channel fractions grow with tier capability
                ok = lo <= mid <= hi
            if not ok:
                raise ValueError(
                    f"per-tier parameters must compress low >= mid >= high, got {self.per_tier}"
                )
        if self.variant == OVERSELECT and not 0.0 < self.overselect_fraction < 1.0:
            raise ValueError(
                f"overselect_fraction must be in (0, 1), got {self.overselect_fraction}"
            )


def _default_latency() -> dict[Tier, float]:
    return {Tier.LOW: 3.0, Tier.MID: 1.5, Tier.HIGH: 1.0}


@dataclass(frozen=True)
class TierPerformanceModel:
    """Per-tier Gaussian round latency, truncated below at mean/10."""

    mean_latency: Mapping[Tier, float] = field(default_factory=_default_latency)
    std_fraction: float = 0.2

    def sample(self, tier: Tier, rng: np.random.Generator) -> float:
        mu = self.mean_latency[tier]
        draw = rng.normal(mu, self.std_fraction * mu)
        return max(draw, mu / 10.0)


@dataclass
class ClientUpdate:
    client_id: str
    delta: GradientTensors
    coverage_mask: GradientTensors | None  # None means full coverage
    n_samples: int
    tier: Tier
    latency: float
    loss: float


@dataclass
class ServerState:
    params: ModelParams
    accum: GradientTensors
    lr: float
    eps: float
    optimizer: str = "adagrad"  # or "sgd" (plain pseudo-gradient application)
    round_index: int = 0


@dataclass(frozen=True)
class HyperParams:
    clients_per_round: int = 100
    client_lr: float = 1.0
    server_lr: float = 0.01
    eps: float = 1e-10
    server_opt: str = "adagrad"
    workers: int = 1


@dataclass
class RoundRecord:
    round: int
    mean_client_loss: float
    n_selected: int
    n_dropped: int
    wall_time: float


def write_round_log_csv(log: list[RoundRecord], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["round", "mean_client_loss", "n_selected", "n_dropped", "wall_time"])
        for rec in log:
            writer.writerow(
                [rec.round, repr(rec.mean_client_loss), rec.n_selected, rec.n_dropped,
                 repr(rec.wall_time)]
            )


def plan_epoch(
    dataset: Dataset,
    assignment: TierAssignment,
    opt: OptimizationConfig,
    clients_per_round: int,
    seed: int,
) -> list[list[str]]:
    """Shuffle eligible clients once and chunk them into rounds.

    Every eligible client appears in exactly one round.  Under exclude_lo
    the low tier is not eligible; under overselect each chunk carries
    ceil(fraction * clients_per_round) extra clients that aggregation will
    drop again, so surviving rounds have clients_per_round updates.
    """
    if clients_per_round < 1:
        raise ValueError(f"clients_per_round must be >= 1, got {clients_per_round}")
    eligible = sorted(dataset.clients)
    if opt.variant == EXCLUDE_LO:
        eligible = [cid for cid in eligible if assignment.tier_of[cid] is not Tier.LOW]
    if not eligible:
        raise ValueError("no eligible clients")
    rng = np.random.default_rng(seed)
    order = [eligible[i] for i in rng.permutation(len(eligible))]
    chunk = clients_per_round
    if opt.variant == OVERSELECT:
        chunk += math.ceil(opt.overselect_fraction * clients_per_round)
    return [order[i : i + chunk] for i in range(0, len(order), chunk)]


def _compress_delta(
    delta: GradientTensors, opt: OptimizationConfig, tier: Tier, seed: int
) -> GradientTensors:
    if opt.variant == PRUNE:
        return prune(delta, PruneSpec(opt.per_tier[tier], opt.prune_rescale), seed)
    if opt.variant in (QUANT, QUANTS):
        scheme = PLAIN if opt.variant == QUANT else SIGN_MAGNITUDE
        spec = QuantSpec(int(opt.per_tier[tier]), scheme, opt.quant_rounding)
        return quantize(delta, spec, seed)
    return delta


def run_client(
    round_start: ModelParams,
    client: ClientDataset,
    opt: OptimizationConfig,
    tier: Tier,
    perf: TierPerformanceModel,
    client_lr: float,
    seed: int,
) -> ClientUpdate:
    """One client turn: a single full-batch SGD step, then tier compression.

    delta = -client_lr * grad on the model the client actually trains; under
    the channel variant that is a sliced sub-model and the delta is embedded
    back into full shape together with its coverage mask.
    """
    if not client.train:
        raise ValueError(f"client {client.client_id}: empty train set")

    mask: GradientTensors | None = None
    if opt.variant == CHANNEL:
        spec = SubModelSpec(opt.per_tier[tier])
        sub_params = extract_submodel(round_start, spec)
        loss, sub_grad = loss_and_grad(sub_params, client.train)
        sub_delta = {k: -client_lr * g for k, g in sub_grad.items()}
        delta, mask = embed_subgradient(sub_delta, spec, round_start.config)
    else:
        loss, grad = loss_and_grad(round_start, client.train)
        delta = {k: -client_lr * g for k, g in grad.items()}
        delta = _compress_delta(delta, opt, tier, derive_seed(seed, "compress"))

    latency = perf.sample(tier, derive_rng(seed, "latency"))
    return ClientUpdate(
        client_id=client.client_id,
        delta=delta,
        coverage_mask=mask,
        n_samples=len(client.train),
        tier=tier,
        latency=latency,
        loss=loss,
    )


def aggregate(
    updates: list[ClientUpdate],
    opt: OptimizationConfig,
    base_round_size: int | None = None,
) -> tuple[GradientTensors, list[str]]:
    """Coverage-aware sample-weighted mean of client deltas, negated.

    Under overselect the slowest updates are dropped first so that at most
    base_round_size survive (largest latency first, ties broken by
    client_id).  Each coordinate averages only over clients whose coverage
    mask includes it; coordinates covered by nobody stay zero.
    """
    if not updates:
        raise ValueError("no updates to aggregate")
    dropped: list[str] = []
    survivors = updates
    if opt.variant == OVERSELECT:
        base = base_round_size if base_round_size is not None else len(updates)
        n_drop = max(0, len(updates) - base)
        if n_drop:
            by_slowness = sorted(updates, key=lambda u: (-u.latency, u.client_id))
            dropped = sorted(u.client_id for u in by_slowness[:n_drop])
            drop_set = set(dropped)
            survivors = [u for u in updates if u.client_id not in drop_set]
    if not survivors:
        raise ValueError("all clients dropped")

    keys = list(survivors[0].delta.keys())
    pseudo: GradientTensors = {}
    for key in keys:
        num = np.zeros_like(survivors[0].delta[key])
        den = np.zeros_like(num)
        for u in survivors:
            w = float(u.n_samples)
            if u.coverage_mask is None:
                num += w * u.delta[key]
                den += w
            else:
                num += w * u.coverage_mask[key] * u.delta[key]
                den += w * u.coverage_mask[key]
        agg = np.divide(num, den, out=np.zeros_like(num), where=den > 0)
        pseudo[key] = -agg
    return pseudo, dropped


def server_step(state: ServerState, pseudo_gradient: GradientTensors) -> ServerState:
    """Apply the pseudo-gradient: AdaGrad by default, plain SGD in test mode."""
    for key, g in pseudo_gradient.items():
        if not np.all(np.isfinite(g)):
            raise ValueError(f"non-finite pseudo-gradient in {key}")
        if state.optimizer == "adagrad":
            state.accum[key] += g * g
            state.params.tensors[key] -= state.lr * g / (np.sqrt(state.accum[key]) + state.eps)
        else:
            state.params.tensors[key] -= state.lr * g
    state.round_index += 1
    return state


def train(
    dataset: Dataset,
    assignment: TierAssignment,
    opt: OptimizationConfig,
    hyper: HyperParams,
    seed: int,
    config: ModelConfig | None = None,
    perf: TierPerformanceModel | None = None,
) -> tuple[ModelParams, list[RoundRecord]]:
    """One federated epoch: every eligible client participates exactly once."""
    if config is None:
        config = ModelConfig(schema=dataset.schema)
    if perf is None:
        perf = TierPerformanceModel()
    if opt.variant == CHANNEL:
        for tier in TIERS:
            width = opt.per_tier[tier] * config.top_hidden
            if abs(width - round(width)) > 1e-9 or round(width) < 1:
                raise ValueError(
                    f"channel fraction {opt.per_tier[tier]} does not slice top_hidden "
                    f"{config.top_hidden} to an integral width >= 1"
                )

    params = init(config, derive_seed(seed, "init"))
    state = ServerState(
        params=params,
        accum={k: np.zeros_like(v) for k, v in params.tensors.items()},
        lr=hyper.server_lr,
        eps=hyper.eps,
        optimizer=hyper.server_opt,
    )
    plan = plan_epoch(dataset, assignment, opt, hyper.clients_per_round, derive_seed(seed, "plan"))

    log: list[RoundRecord] = []
    for r, round_clients in enumerate(plan):
        t0 = time.perf_counter()
        round_start = state.params

        def job(cid: str) -> ClientUpdate:
            return run_client(
                round_start,
                dataset.clients[cid],
                opt,
                assignment.tier_of[cid],
                perf,
                hyper.client_lr,
                derive_seed(seed, "round", r, "client", cid),
            )

        if hyper.workers > 1:
            with ThreadPoolExecutor(max_workers=hyper.workers) as pool:
                updates = list(pool.map(job, round_clients))
        else:
            updates = [job(cid) for cid in round_clients]

        pseudo, dropped = aggregate(updates, opt, hyper.clients_per_round)
        server_step(state, pseudo)
        log.append(
            RoundRecord(
                round=r,
                mean_client_loss=float(np.mean([u.loss for u in updates])),
                n_selected=len(updates),
                n_dropped=len(dropped),
                wall_time=time.perf_counter() - t0,
            )
        )
    return state.params, log
