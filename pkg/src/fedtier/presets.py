"""Named tier-aware optimization presets.

The per-tier parameters follow the standard 1:2:4 / 1:2:8 / 1:4:16 overhead
ratios between low-, mid-, and high-end devices: pruning keeps the high
tier uncompressed and drops 50-93.75% elsewhere, quantization narrows low
tiers to 8/4/2 bits while the high tier stays at 32, and channel slicing
shrinks the top hidden layer down to 6.25% of its width.
"""

from __future__ import annotations

from .engine import (
    CHANNEL,
    EXCLUDE_LO,
    NONE,
    OVERSELECT,
    PRUNE,
    QUANT,
    QUANTS,
    OptimizationConfig,
)
from .tiering import Tier


def _per_tier(low, mid, high) -> dict[Tier, float]:
    return {Tier.LOW: low, Tier.MID: mid, Tier.HIGH: high}


PRESETS: dict[str, OptimizationConfig] = {
    "none": OptimizationConfig(variant=NONE),
    "exclude_lo": OptimizationConfig(variant=EXCLUDE_LO),
    "overselect": OptimizationConfig(variant=OVERSELECT, overselect_fraction=0.2),
    "prune_1_2_4": OptimizationConfig(variant=PRUNE, per_tier=_per_tier(0.75, 0.50, 0.0)),
    "prune_1_2_8": OptimizationConfig(variant=PRUNE, per_tier=_per_tier(0.875, 0.75, 0.0)),
    "prune_1_4_16": OptimizationConfig(variant=PRUNE, per_tier=_per_tier(0.9375, 0.75, 0.0)),
    "quant_1_2_4": OptimizationConfig(variant=QUANT, per_tier=_per_tier(8, 16, 32)),
    "quant_1_2_8": OptimizationConfig(variant=QUANT, per_tier=_per_tier(4, 8, 32)),
    "quant_1_4_16": OptimizationConfig(variant=QUANT, per_tier=_per_tier(2, 4, 32)),
    "quants_1_2_4": OptimizationConfig(variant=QUANTS, per_tier=_per_tier(8, 16, 32)),
    "quants_1_2_8": OptimizationConfig(variant=QUANTS, per_tier=_per_tier(4, 8, 32)),
    "quants_1_4_16": OptimizationConfig(variant=QUANTS, per_tier=_per_tier(2, 4, 32)),
    "channel_1_2_4": OptimizationConfig(variant=CHANNEL, per_tier=_per_tier(0.25, 0.50, 1.0)),
    "channel_1_2_8": OptimizationConfig(variant=CHANNEL, per_tier=_per_tier(0.125, 0.25, 1.0)),
    "channel_1_4_16": OptimizationConfig(variant=CHANNEL, per_tier=_per_tier(0.0625, 0.25, 1.0)),
}


def get_preset(name: str) -> OptimizationConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown optimization preset {name!r}; known: {', '.join(sorted(PRESETS))}"
        ) from None
