import numpy as np
import pytest

from fedtier.compression import (
    PAPER_LITERAL,
    PruneSpec,
    QuantSpec,
    prune,
    prune_array,
    quantize,
    quantize_array,
)
from fedtier.rng import derive_rng


class TestPrune:
    def test_zero_fraction_is_identity(self):
        x = np.linspace(-1, 1, 50).reshape(5, 10)
        out = prune_array(x, PruneSpec(0.0), derive_rng(0))
        assert np.array_equal(out, x)

    def test_survivor_count_binomial_bound(self):
        # 1e6 coordinates at drop 0.75: survivors within 3 sigma of 2.5e5
        rng = derive_rng(1)
        x = rng.normal(size=1_000_000)
        out = prune_array(x, PruneSpec(0.75), derive_rng(2))
        survivors = int((out != 0.0).sum())
        sigma = np.sqrt(1_000_000 * 0.75 * 0.25)
        assert abs(survivors - 250_000) < 3 * sigma

    def test_rescale_unbiased_coordinatewise(self):
        # oracle: empirical mean over 1e4 seeds within 3 standard errors
        x = np.linspace(-2.0, 2.0, 10)
        x[3] = 0.7
        n = 10_000
        acc = np.zeros_like(x)
        for s in range(n):
            acc += prune_array(x, PruneSpec(0.5, rescale=True), derive_rng("rs", s))
        mean = acc / n
        # var of one draw: x^2 * (1-f)/f... Q = x/(1-f) w.p. (1-f), else 0
        # E[Q^2] = x^2/(1-f); var = x^2 * f/(1-f)
        se = np.sqrt(x**2 * (0.5 / 0.5)) / np.sqrt(n)
        assert np.all(np.abs(mean - x) <= 3 * np.maximum(se, 1e-12))

    def test_deterministic_in_seed(self):
        x = np.arange(100, dtype=float)
        a = prune({"t": x}, PruneSpec(0.3), rng_seed=5)
        b = prune({"t": x}, PruneSpec(0.3), rng_seed=5)
        assert np.array_equal(a["t"], b["t"])

    def test_invalid_fraction_rejected(self):
        with pytest.raises(ValueError):
            PruneSpec(1.0)
        with pytest.raises(ValueError):
            PruneSpec(-0.1)


class TestQuantizePlain:
    def test_constant_tensor_passes_through(self):
        x = np.full((4, 4), 3.7)
        out = quantize_array(x, QuantSpec(bits=2), derive_rng(0))
        assert np.array_equal(out, x)

    def test_bits_32_identity(self):
        x = np.random.default_rng(0).normal(size=100)
        out = quantize_array(x, QuantSpec(bits=32), derive_rng(0))
        assert np.array_equal(out, x)

    def test_two_bit_grid_and_unbiased_mean(self):
        # values {0, 1}, bits 2 -> grid {0, 1/3, 2/3, 1}; 0.5 rounds to an
        # adjacent point only; MC mean over 1e5 trials near 0.5
        n = 100_000
        x = np.concatenate([[0.0, 1.0], np.full(n, 0.5)])
        out = quantize_array(x, QuantSpec(bits=2), derive_rng(42))
        mid = out[2:]
        grid = np.array([0.0, 1 / 3, 2 / 3, 1.0])
        assert np.all(np.isin(mid, grid[1:3]))
        # Q is 1/3 or 2/3 with p 1/2 each -> sd = 1/6
        se = (1 / 6) / np.sqrt(n)
        assert abs(mid.mean() - 0.5) < 3 * se

    def test_output_always_on_grid(self):
        rng = np.random.default_rng(3)
        x = rng.normal(size=1000)
        for bits in (1, 2, 4, 8):
            out = quantize_array(x, QuantSpec(bits=bits), derive_rng("g", bits))
            lo, hi = x.min(), x.max()
            levels = 2**bits
            step = (hi - lo) / (levels - 1)
            grid = lo + np.arange(levels) * step
            assert np.all(np.isin(out, grid))

    def test_idempotent_on_grid_values_unbiased(self):
        lo, hi, levels = -1.0, 3.0, 2**3
        step = (hi - lo) / (levels - 1)
        grid = lo + np.arange(levels) * step
        x = np.repeat(grid, 17)
        out = quantize_array(x, QuantSpec(bits=3), derive_rng(9))
        assert np.array_equal(out, x)

    def test_zero_quantizes_to_nonzero_when_grid_misses_zero(self):
        # the embedding-pollution mechanism: range straddles zero but the
        # grid has no zero point, so exact zeros always move
        x = np.concatenate([[-1.0, 1.5], np.zeros(1000)])
        levels = 2**2
        step = 2.5 / (levels - 1)
        grid = -1.0 + np.arange(levels) * step
        assert not np.any(grid == 0.0)
        out = quantize_array(x, QuantSpec(bits=2), derive_rng(7))
        assert np.all(out[2:] != 0.0)

    def test_paper_literal_mean_is_mirrored(self):
        # printed rounding assigns p_k with prob (x-p_k)/step, so
        # E[Q] = p_k + p_{k+1} - x
        n = 200_000
        x = np.concatenate([[0.0, 1.0], np.full(n, 0.2)])
        out = quantize_array(
            x, QuantSpec(bits=2, rounding=PAPER_LITERAL), derive_rng(11)
        )
        vals = out[2:]
        # x=0.2 sits between 0 and 1/3: expect mean 0 + 1/3 - 0.2 = 0.1333...
        expected = 1 / 3 - 0.2
        sd = np.sqrt((0.0 - expected) ** 2 * 0.6 + (1 / 3 - expected) ** 2 * 0.4)
        assert abs(vals.mean() - expected) < 3 * sd / np.sqrt(n)

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError, match="non-finite"):
            quantize_array(np.array([1.0, np.nan]), QuantSpec(bits=2), derive_rng(0))

    def test_bits_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            QuantSpec(bits=0)
        with pytest.raises(ValueError):
            QuantSpec(bits=33)


class TestQuantizeSignMagnitude:
    def test_exact_zeros_stay_exact_zeros(self):
        x = np.concatenate([[-2.0, 1.0], np.zeros(100_000)])
        for bits in (2, 3, 8):
            out = quantize_array(
                x, QuantSpec(bits=bits, scheme="sign_magnitude"), derive_rng("z", bits)
            )
            assert np.all(out[2:] == 0.0)

    def test_sign_preserved(self):
        rng = np.random.default_rng(5)
        x = rng.normal(size=5000)
        out = quantize_array(x, QuantSpec(bits=3, scheme="sign_magnitude"), derive_rng(1))
        sign_in = np.sign(x)
        sign_out = np.sign(out)
        assert np.all((sign_out == sign_in) | (sign_out == 0.0))

    def test_magnitude_grid_membership(self):
        rng = np.random.default_rng(6)
        x = rng.normal(size=2000)
        bits = 4
        out = quantize_array(x, QuantSpec(bits=bits, scheme="sign_magnitude"), derive_rng(2))
        hi = np.abs(x).max()
        levels = 2 ** (bits - 1)
        grid = np.arange(levels) * (hi / (levels - 1))
        assert np.all(np.isin(np.abs(out), grid))

    def test_requires_two_bits(self):
        with pytest.raises(ValueError, match="sign"):
            QuantSpec(bits=1, scheme="sign_magnitude")

    def test_all_zero_tensor_passes_through(self):
        x = np.zeros(10)
        out = quantize_array(x, QuantSpec(bits=4, scheme="sign_magnitude"), derive_rng(3))
        assert np.array_equal(out, x)


class TestDictLevel:
    def test_per_tensor_seeding_order_independent(self):
        rng = np.random.default_rng(8)
        grad = {"a": rng.normal(size=50), "b": rng.normal(size=50)}
        fwd = quantize(grad, QuantSpec(bits=4), rng_seed=3)
        swapped = quantize({"b": grad["b"], "a": grad["a"]}, QuantSpec(bits=4), rng_seed=3)
        assert np.array_equal(fwd["a"], swapped["a"])
        assert np.array_equal(fwd["b"], swapped["b"])

    def test_identity_pipeline_composition(self):
        rng = np.random.default_rng(9)
        grad = {"a": rng.normal(size=100)}
        out = quantize(prune(grad, PruneSpec(0.0), 1), QuantSpec(bits=32), 2)
        assert np.array_equal(out["a"], grad["a"])
