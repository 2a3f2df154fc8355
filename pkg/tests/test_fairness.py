"""Masked weighted fairness index and its analytic gradient."""

import numpy as np
import pytest

from fairdlmp.fairness import (FairnessContext, FairnessError, NonsmoothPointError,
                               jain_gradient, jain_masked, jain_scalar)


def fd_gradient(ctx: FairnessContext, p: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of the masked index at fixed mask."""
    grad = np.zeros(len(p))
    for k in range(len(p)):
        if ctx.z[k] == 0:
            continue
        hi, lo = p.copy(), p.copy()
        hi[k] += h
        lo[k] -= h
        grad[k] = (jain_masked(ctx, hi) - jain_masked(ctx, lo)) / (2 * h)
    return grad


class TestScalarIndex:
    def test_equal_allocation(self):
        assert jain_scalar(np.array([1.0, 1.0, 1.0])) == pytest.approx(1.0, abs=1e-15)

    def test_m_of_n_equal_shares(self):
        for n in range(1, 11):
            for m in range(1, n + 1):
                x = np.zeros(n)
                x[:m] = 2.5
                assert jain_scalar(x) == pytest.approx(m / n, abs=1e-15)

    def test_one_two_three(self):
        assert jain_scalar(np.array([1.0, 2.0, 3.0])) == pytest.approx(6.0 / 7.0, abs=1e-15)

    def test_rejects_negative(self):
        with pytest.raises(FairnessError):
            jain_scalar(np.array([1.0, -0.5]))

    def test_rejects_all_zero(self):
        with pytest.raises(FairnessError):
            jain_scalar(np.zeros(3))


class TestMaskedIndex:
    def test_equal_weighted_allocation(self):
        p = np.array([2.0, 2.0, 2.0])
        ctx = FairnessContext.from_allocation(p, np.ones(3), np.array([1, 1, 1]))
        assert jain_masked(ctx, p) == pytest.approx(1.0, abs=1e-15)

    def test_supplier_excluded_from_mask(self):
        # one exporting aggregator among three; the two consumers are equal
        p = np.array([-0.5, 1.0, 1.0])
        ctx = FairnessContext.from_allocation(p, np.ones(3), np.array([1, 1, 1]))
        assert ctx.mask_count == 2
        assert jain_masked(ctx, p) == pytest.approx(1.0, abs=1e-15)

    def test_reduces_to_scalar_on_masked_entries(self):
        p = np.array([1.0, 2.0, 3.0])
        ctx = FairnessContext.from_allocation(p, np.ones(3), np.array([1, 1, 1]))
        assert jain_masked(ctx, p) == pytest.approx(6.0 / 7.0, abs=1e-15)

    def test_range(self):
        rng = np.random.default_rng(2)
        for _ in range(200):
            n = int(rng.integers(2, 9))
            p = rng.uniform(0.01, 3.0, n)
            c = rng.uniform(0.5, 4.0, n)
            sizes = rng.integers(1, 30, n)
            ctx = FairnessContext.from_allocation(p, c, sizes)
            j = jain_masked(ctx, p)
            assert 0.0 < j <= 1.0 + 1e-15

    def test_scale_invariance(self):
        rng = np.random.default_rng(4)
        p = rng.uniform(0.1, 2.0, 6)
        ctx = FairnessContext.from_allocation(p, rng.uniform(1, 3, 6), np.full(6, 10))
        base = jain_masked(ctx, p)
        for alpha in (0.1, 3.0, 42.0):
            assert jain_masked(ctx, alpha * p) == pytest.approx(base, rel=1e-13)

    def test_weights_need_positive_prices(self):
        with pytest.raises(FairnessError):
            FairnessContext.from_allocation(np.ones(2), np.array([1.0, 0.0]), np.ones(2))

    def test_empty_mask_rejected(self):
        p = np.array([-1.0, 0.0])
        ctx = FairnessContext.from_allocation(p, np.ones(2), np.ones(2))
        with pytest.raises(FairnessError):
            jain_masked(ctx, p)


class TestGradient:
    def test_matches_finite_differences(self):
        rng = np.random.default_rng(20240818)
        worst = 0.0
        for _ in range(100):
            n = int(rng.integers(3, 10))
            p = rng.uniform(0.05, 3.0, n)
            c = rng.uniform(0.5, 4.0, n)
            sizes = rng.integers(1, 25, n)
            ctx = FairnessContext.from_allocation(p, c, sizes)
            grad = jain_gradient(ctx, p)
            ref = fd_gradient(ctx, p)
            scale = max(np.abs(ref).max(), 1e-12)
            worst = max(worst, float(np.abs(grad - ref).max() / scale))
        assert worst <= 1e-5

    def test_masked_components_exactly_zero(self):
        p = np.array([1.0, -0.2, 0.7, 0.0])
        ctx = FairnessContext.from_allocation(p, np.ones(4), np.ones(4))
        grad = jain_gradient(ctx, p, strict=False)
        assert grad[1] == 0.0 and grad[3] == 0.0

    def test_masked_entry_does_not_move_index(self):
        p = np.array([1.0, -0.2, 0.7])
        ctx = FairnessContext.from_allocation(p, np.ones(3), np.ones(3))
        base = jain_masked(ctx, p)
        p2 = p.copy()
        p2[1] = -5.0
        assert jain_masked(ctx, p2) == base

    def test_uniform_scaling_direction_is_flat(self):
        # scale invariance forces sum_k grad_k * p_k = 0
        rng = np.random.default_rng(6)
        p = rng.uniform(0.1, 2.0, 7)
        ctx = FairnessContext.from_allocation(p, rng.uniform(1, 3, 7), np.full(7, 10))
        grad = jain_gradient(ctx, p)
        assert float(grad @ p) == pytest.approx(0.0, abs=1e-12)

    def test_single_consumer_gradient_zero(self):
        p = np.array([1.4, -0.1])
        ctx = FairnessContext.from_allocation(p, np.ones(2), np.ones(2))
        grad = jain_gradient(ctx, p, strict=False)
        assert np.array_equal(grad, np.zeros(2))

    def test_equal_allocation_is_stationary_along_mask(self):
        p = np.array([2.0, 2.0, 2.0, 2.0])
        ctx = FairnessContext.from_allocation(p, np.ones(4), np.ones(4))
        grad = jain_gradient(ctx, p)
        assert np.abs(grad).max() <= 1e-14

    def test_strict_mode_raises_inside_deadband(self):
        p = np.array([1.0, 5e-10])
        ctx = FairnessContext.from_allocation(p, np.ones(2), np.ones(2))
        with pytest.raises(NonsmoothPointError):
            jain_gradient(ctx, p, strict=True)
        # non-strict evaluation is defined (used inside the solver loop)
        jain_gradient(ctx, p, strict=False)
