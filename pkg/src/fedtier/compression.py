"""Per-tier gradient transformations: random pruning and stochastic quantization.

Quantization ranges are computed per tensor over the full dense gradient,
including the zero rows of embedding entries the client never touched.
With the plain scheme the grid usually misses zero, so untouched entries
come out nonzero -- the cross-tier noise source that the sign-magnitude
scheme avoids by anchoring its grid at zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .rng import derive_rng

GradientTensors = dict[str, np.ndarray]

PLAIN = "plain"
SIGN_MAGNITUDE = "sign_magnitude"
UNBIASED = "unbiased"
PAPER_LITERAL = "paper_literal"


@dataclass(frozen=True)
class QuantSpec:
    bits: int
    scheme: str = PLAIN
    rounding: str = UNBIASED

    def __post_init__(self):
        if not 1 <= self.bits <= 32:
            raise ValueError(f"bits must be in [1, 32], got {self.bits}")
        if self.scheme not in (PLAIN, SIGN_MAGNITUDE):
            raise ValueError(f"unknown scheme {self.scheme!r}")
        if self.rounding not in (UNBIASED, PAPER_LITERAL):
            raise ValueError(f"unknown rounding {self.rounding!r}")
        if self.scheme == SIGN_MAGNITUDE and self.bits < 2:
            raise ValueError("sign_magnitude needs bits >= 2 (one bit is the sign)")


@dataclass(frozen=True)
class PruneSpec:
    drop_fraction: float
    rescale: bool = False

    def __post_init__(self):
        if not 0.0 <= self.drop_fraction < 1.0:
            raise ValueError(f"drop_fraction must be in [0, 1), got {self.drop_fraction}")


def prune_array(x: np.ndarray, spec: PruneSpec, rng: np.random.Generator) -> np.ndarray:
    if spec.drop_fraction == 0.0:
        return x.copy()
    keep = rng.random(x.shape) >= spec.drop_fraction
    out = np.where(keep, x, 0.0)
    if spec.rescale:
        out = out / (1.0 - spec.drop_fraction)
    return out


def _stochastic_round(
    x: np.ndarray, lo: float, step: float, levels: int, rounding: str, rng: np.random.Generator
) -> np.ndarray:
    """Round each value to an adjacent point of the grid lo + i*step."""
    t = (x - lo) / step
    k = np.floor(t)
    np.clip(k, 0, levels - 1, out=k)
    frac = t - k
    p_up = frac if rounding == UNBIASED else 1.0 - frac
    up = (rng.random(x.shape) < p_up) & (k < levels - 1)
    return lo + (k + up) * step


def quantize_array(x: np.ndarray, spec: QuantSpec, rng: np.random.Generator) -> np.ndarray:
    """Stochastically round one tensor onto its value-range grid.

    Plain: 2^bits points uniformly over [min(x), max(x)].  Sign-magnitude:
    one sign bit plus 2^(bits-1) points over [0, max|x|], sign reapplied,
    so exact zeros always map to exact zeros.  Degenerate ranges (min ==
    max) pass through unchanged.  bits == 32 means no quantization.
    """
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite tensor")
    if spec.bits == 32:
        return x.copy()
    if spec.scheme == PLAIN:
        lo = float(x.min())
        hi = float(x.max())
        if lo == hi:
            return x.copy()
        levels = 2 ** spec.bits
        step = (hi - lo) / (levels - 1)
        return _stochastic_round(x, lo, step, levels, spec.rounding, rng)
    # sign-magnitude
    mag = np.abs(x)
    hi = float(mag.max())
    if hi == 0.0:
        return x.copy()
    levels = 2 ** (spec.bits - 1)  # bits >= 2, so at least {0, hi}
    step = hi / (levels - 1)
    q = _stochastic_round(mag, 0.0, step, levels, spec.rounding, rng)
    return np.sign(x) * q


def prune(grad: GradientTensors, spec: PruneSpec, rng_seed: int) -> GradientTensors:
    """Zero each coordinate independently with probability drop_fraction.

    Survivors are scaled by 1/(1 - drop_fraction) when spec.rescale is set.
    Per-tensor substreams are derived from (rng_seed, tensor name) so the
    result does not depend on dict iteration order.
    """
    return {
        name: prune_array(x, spec, derive_rng(rng_seed, "prune", name))
        for name, x in grad.items()
    }


def quantize(grad: GradientTensors, spec: QuantSpec, rng_seed: int) -> GradientTensors:
    return {
        name: quantize_array(x, spec, derive_rng(rng_seed, "quant", name))
        for name, x in grad.items()
    }
