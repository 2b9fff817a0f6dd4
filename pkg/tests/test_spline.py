import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kanppo.numcore import Rng
from kanppo.spline import (
    EdgeFunction,
    SplineConfig,
    basis_values,
    knot_vector,
    spline_eval,
    spline_grad_coeffs,
    spline_grad_input,
)

CONFIGS = [SplineConfig(k, g) for k in (1, 2, 3) for g in (1, 3, 5, 8)]


def cox_de_boor(i, p, x, t):
    """Textbook recursion on an arbitrary knot list, half-open intervals."""
    if p == 0:
        return 1.0 if t[i] <= x < t[i + 1] else 0.0
    left = 0.0 if t[i + p] == t[i] else (x - t[i]) / (t[i + p] - t[i]) * cox_de_boor(i, p - 1, x, t)
    right = (
        0.0
        if t[i + p + 1] == t[i + 1]
        else (t[i + p + 1] - x) / (t[i + p + 1] - t[i + 1]) * cox_de_boor(i + 1, p - 1, x, t)
    )
    return left + right


def oracle_basis(k, g, lo, hi, x):
    h = (hi - lo) / g
    t = [lo + (j - k) * h for j in range(g + 2 * k + 1)]
    return np.array([cox_de_boor(i, k, x, t) for i in range(g + k)])


def fd(f, x, h=1e-6):
    return (f(x + h) - f(x - h)) / (2 * h)


def away_from_knots(config, x, margin=1e-4):
    t = knot_vector(config)
    return np.min(np.abs(np.asarray(x)[..., None] - t), axis=-1) > margin


class TestConfig:
    def test_basis_count(self):
        assert SplineConfig(2, 3).basis_count == 5
        assert SplineConfig(3, 8).basis_count == 11

    @pytest.mark.parametrize("kwargs", [dict(order_k=0), dict(grid_g=0), dict(range_min=1.0, range_max=1.0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            SplineConfig(**kwargs)

    def test_knot_vector_layout(self):
        c = SplineConfig(2, 3, -1.0, 1.0)
        t = knot_vector(c)
        assert len(t) == 3 + 2 * 2 + 1
        np.testing.assert_allclose(np.diff(t), 2.0 / 3.0, rtol=1e-12)
        assert t[2] == -1.0 and t[5] == 1.0

    def test_round_trip(self):
        c = SplineConfig(3, 5, -2.0, 0.5)
        assert SplineConfig.from_dict(c.to_dict()) == c


class TestBasisValues:
    def test_partition_at_zero(self):
        b = basis_values(SplineConfig(2, 3), 0.0)
        assert b.shape == (5,)
        assert abs(b.sum() - 1.0) <= 1e-12

    def test_linear_hats(self):
        np.testing.assert_allclose(basis_values(SplineConfig(1, 1, 0.0, 1.0), 0.5), [0.5, 0.5], atol=1e-15)

    def test_matches_textbook_recursion(self):
        np.testing.assert_allclose(
            basis_values(SplineConfig(2, 3), 0.37), oracle_basis(2, 3, -1.0, 1.0, 0.37), rtol=0, atol=1e-14
        )

    @pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"k{c.order_k}g{c.grid_g}")
    def test_matches_oracle_sweep(self, config):
        xs = np.linspace(-0.999, 0.999, 41)
        ours = basis_values(config, xs)
        ref = np.array([oracle_basis(config.order_k, config.grid_g, -1.0, 1.0, x) for x in xs])
        np.testing.assert_allclose(ours, ref, atol=1e-13)

    def test_clamped_outside(self):
        c = SplineConfig(2, 3)
        np.testing.assert_array_equal(basis_values(c, 5.0), basis_values(c, 1.0))
        np.testing.assert_array_equal(basis_values(c, -7.0), basis_values(c, -1.0))

    def test_right_end_partition(self):
        for c in CONFIGS:
            assert abs(basis_values(c, 1.0).sum() - 1.0) <= 1e-12

    def test_non_finite_rejected(self):
        with pytest.raises(ValueError):
            basis_values(SplineConfig(), np.nan)

    def test_batch_shape(self):
        assert basis_values(SplineConfig(2, 3), np.zeros((4, 6))).shape == (4, 6, 5)


class TestProperties:
    @pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"k{c.order_k}g{c.grid_g}")
    def test_fuzzed_partition_nonneg_local_support(self, config):
        x = Rng(config.order_k * 100 + config.grid_g).uniform(10_000, low=-1.0, high=1.0)
        b = basis_values(config, x)
        assert np.max(np.abs(b.sum(axis=1) - 1.0)) <= 1e-12
        assert np.all(b >= 0.0)
        assert np.max(np.count_nonzero(b > 0.0, axis=1)) <= config.order_k + 1

    @pytest.mark.parametrize("config", CONFIGS, ids=lambda c: f"k{c.order_k}g{c.grid_g}")
    def test_continuity_across_knots(self, config):
        coeffs = Rng(5).normal(config.basis_count)
        edge = EdgeFunction(config, coeffs)
        d = 1e-7
        # interior knots; the probe difference minus its first-order part is the jump
        for t in knot_vector(config)[config.order_k + 1 : config.order_k + config.grid_g]:
            diff = spline_eval(edge, t + d) - spline_eval(edge, t - d)
            slope = spline_grad_input(edge, t + d) + spline_grad_input(edge, t - d)
            assert abs(diff - d * slope) < 1e-9

    @settings(max_examples=200, deadline=None)
    @given(
        st.sampled_from(CONFIGS),
        st.floats(-0.999, 0.999),
        st.integers(0, 2**32),
    )
    def test_gradient_consistency(self, config, x, seed):
        if not away_from_knots(config, x):
            return
        edge = EdgeFunction(config, Rng(seed).normal(config.basis_count))
        num = fd(lambda v: spline_eval(edge, v), x)
        ana = spline_grad_input(edge, x)
        assert abs(num - ana) <= 1e-6 * max(1.0, abs(ana))


class TestSplineEval:
    def test_constant_coefficients(self):
        edge = EdgeFunction(SplineConfig(2, 3), np.full(5, 0.7))
        np.testing.assert_allclose(spline_eval(edge, np.linspace(-1, 1, 17)), 0.7, rtol=1e-12)

    def test_zero_coefficients(self):
        assert spline_eval(EdgeFunction(SplineConfig(3, 5)), 0.2) == 0.0

    def test_dot_product_with_basis(self):
        c = SplineConfig(2, 3)
        edge = EdgeFunction(c, Rng(1).normal(5))
        xs = np.linspace(-1.2, 1.2, 25)
        expected = [float(np.dot(edge.coeffs, oracle_basis(2, 3, -1, 1, float(np.clip(x, -1, 0.999999999999))))) for x in xs]
        np.testing.assert_allclose(spline_eval(edge, xs), expected, atol=1e-9)

    def test_wrong_coefficient_count(self):
        with pytest.raises(ValueError):
            EdgeFunction(SplineConfig(2, 3), np.zeros(4))


class TestGradients:
    def test_coeff_grad_partition(self):
        edge = EdgeFunction(SplineConfig(2, 3), Rng(2).normal(5))
        assert abs(spline_grad_coeffs(edge, 0.3).sum() - 1.0) <= 1e-12

    def test_coeff_grad_matches_fd(self):
        c = SplineConfig(2, 3)
        coeffs = Rng(3).normal(5)
        x = 0.41
        g = spline_grad_coeffs(EdgeFunction(c, coeffs), x)
        for i in range(5):
            def f(ci):
                cc = coeffs.copy()
                cc[i] = ci
                return spline_eval(EdgeFunction(c, cc), x)
            num = fd(f, coeffs[i])
            assert abs(num - g[i]) <= 1e-7 * max(abs(g[i]), 1e-3)

    def test_coeff_grad_clamped(self):
        edge = EdgeFunction(SplineConfig(2, 3), Rng(4).normal(5))
        np.testing.assert_array_equal(spline_grad_coeffs(edge, 3.0), spline_grad_coeffs(edge, 1.0))

    def test_input_grad_constant_spline(self):
        edge = EdgeFunction(SplineConfig(2, 3), np.full(5, -1.3))
        np.testing.assert_allclose(spline_grad_input(edge, np.linspace(-0.95, 0.95, 11)), 0.0, atol=1e-12)

    def test_input_grad_fd_at_quarter(self):
        edge = EdgeFunction(SplineConfig(2, 3), Rng(6).normal(5))
        num = fd(lambda v: spline_eval(edge, v), 0.25)
        ana = spline_grad_input(edge, 0.25)
        assert abs(num - ana) <= 1e-6 * abs(ana)

    @pytest.mark.parametrize("x", [-1.5, 1.01, 40.0])
    def test_input_grad_zero_outside(self, x):
        edge = EdgeFunction(SplineConfig(2, 3), Rng(7).normal(5))
        assert spline_grad_input(edge, x) == 0.0
