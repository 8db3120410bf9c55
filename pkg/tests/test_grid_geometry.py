"""Covariant calculus: closed-form oracles, scaling identities, graph distances."""

import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ricci_heat_lab.errors import GridError, UnsupportedRankError
from ricci_heat_lab.grid_geometry import (
    ConformalMetric,
    GridSpec,
    ScalarField,
    TensorField,
    covariant_derivative,
    curvature_derivative_norm,
    derivative_norm,
    geodesic_distance,
    laplace_beltrami,
    metric_ball,
    scalar_curvature,
    tensor_norm,
)

TWO_PI = 2.0 * np.pi


def torus(n=64):
    return GridSpec(n, n, TWO_PI, TWO_PI)


def metric_from(spec, fn):
    x, y = spec.coords()
    return ConformalMetric(spec, fn(x, y))


def flat(spec):
    return ConformalMetric(spec, np.zeros(spec.shape))


def wrapped_euclidean(spec, i0, j0):
    """Brute-force flat torus distance: min over the four lattice translates."""
    x, y = spec.coords()
    dx = np.abs(x - i0 * spec.hx)
    dy = np.abs(y - j0 * spec.hy)
    dx = np.minimum(dx, spec.Lx - dx)
    dy = np.minimum(dy, spec.Ly - dy)
    return np.hypot(dx, dy)


class TestGridSpec:
    def test_rejects_small_grids(self):
        with pytest.raises(GridError):
            GridSpec(4, 64, TWO_PI, TWO_PI)

    def test_rejects_nonpositive_lengths(self):
        with pytest.raises(GridError):
            GridSpec(16, 16, 0.0, TWO_PI)

    def test_spacings(self):
        spec = GridSpec(10, 20, 1.0, 4.0)
        assert spec.hx == 0.1
        assert spec.hy == 0.2


class TestScalarCurvature:
    def test_flat_is_zero(self):
        r = scalar_curvature(flat(torus(16)))
        assert np.array_equal(r.values, np.zeros((16, 16)))

    def test_constant_conformal_factor_is_flat(self):
        spec = torus(16)
        r = scalar_curvature(ConformalMetric(spec, 0.7 * np.ones(spec.shape)))
        assert np.array_equal(r.values, np.zeros(spec.shape))

    def test_sine_profile_closed_form(self):
        # f = 0.1 sin x  =>  R = -2 e^{-2f} Δ₀ f = 0.2 sin(x) e^{-0.2 sin x}
        spec = torus(64)
        x, _ = spec.coords()
        metric = ConformalMetric(spec, 0.1 * np.sin(x))
        expected = 0.2 * np.sin(x) * np.exp(-0.2 * np.sin(x))
        err = np.abs(scalar_curvature(metric).values - expected).max()
        assert err < 0.5 * spec.hx**2

    def test_conformal_shift_identity(self):
        # R(f + c) = e^{-2c} R(f) at the stencil level
        spec = torus(32)
        x, y = spec.coords()
        f = 0.2 * np.sin(x) * np.cos(y)
        r0 = scalar_curvature(ConformalMetric(spec, f)).values
        r1 = scalar_curvature(ConformalMetric(spec, f + 0.9)).values
        np.testing.assert_allclose(np.exp(2 * 0.9) * r1, r0, rtol=1e-12, atol=1e-14)


class TestCovariantDerivative:
    def test_gradient_of_constant_is_zero(self):
        spec = torus(16)
        grad = covariant_derivative(flat(spec), ScalarField(spec, 3.3 * np.ones(spec.shape)))
        assert grad.rank == 1
        assert np.array_equal(grad.components, np.zeros((2, 16, 16)))

    def test_flat_gradient_of_sine(self):
        spec = torus(64)
        x, _ = spec.coords()
        grad = covariant_derivative(flat(spec), ScalarField(spec, np.sin(x)))
        assert np.abs(grad.components[0] - np.cos(x)).max() < spec.hx**2
        assert np.abs(grad.components[1]).max() == 0.0

    def test_constant_factor_hessian_norm(self):
        # f ≡ c: Γ = 0, so |∇²(sin x)| = e^{-2c}|sin x| up to the wide stencil error
        spec = torus(64)
        x, _ = spec.coords()
        c = 0.4
        metric = ConformalMetric(spec, c * np.ones(spec.shape))
        hess = covariant_derivative(metric, covariant_derivative(metric, ScalarField(spec, np.sin(x))))
        norm = tensor_norm(metric, hess).values
        expected = np.exp(-2 * c) * np.abs(np.sin(x))
        assert np.abs(norm - expected).max() < 0.5 * spec.hx**2

    def test_rank_cap(self):
        spec = torus(16)
        field = ScalarField(spec, np.sin(spec.coords()[0]))
        out = field
        for _ in range(4):
            out = covariant_derivative(flat(spec), out)
        with pytest.raises(UnsupportedRankError):
            covariant_derivative(flat(spec), out)

    def test_grid_mismatch_rejected(self):
        with pytest.raises(GridError):
            covariant_derivative(
                flat(torus(16)), ScalarField(torus(32), np.zeros((32, 32)))
            )


class TestTensorNorm:
    def test_zero_field(self):
        spec = torus(16)
        field = TensorField(spec, 1, np.zeros((2, 16, 16)))
        assert np.array_equal(tensor_norm(flat(spec), field).values, np.zeros(spec.shape))

    def test_flat_rank1(self):
        spec = torus(32)
        x, _ = spec.coords()
        comps = np.stack([np.cos(x), np.zeros(spec.shape)])
        norm = tensor_norm(flat(spec), TensorField(spec, 1, comps))
        np.testing.assert_allclose(norm.values, np.abs(np.cos(x)), rtol=0, atol=0)

    def test_constant_factor_rank1(self):
        spec = torus(32)
        x, _ = spec.coords()
        c = 1.3
        comps = np.stack([np.cos(x), np.zeros(spec.shape)])
        metric = ConformalMetric(spec, c * np.ones(spec.shape))
        norm = tensor_norm(metric, TensorField(spec, 1, comps))
        np.testing.assert_allclose(
            norm.values, np.exp(-c) * np.abs(np.cos(x)), rtol=1e-15, atol=0
        )

    @settings(max_examples=25, deadline=None)
    @given(
        st.floats(2.0**-20, 8.0, allow_nan=False),
        st.sampled_from([-1.0, 1.0]),
    )
    def test_absolute_homogeneity(self, mag, sign):
        lam = sign * mag
        spec = GridSpec(8, 8, TWO_PI, TWO_PI)
        rng = np.random.default_rng(7)
        comps = rng.standard_normal((2, 2, 8, 8))
        metric = ConformalMetric(spec, 0.3 * rng.standard_normal((8, 8)))
        base = tensor_norm(metric, TensorField(spec, 2, comps)).values
        scaled = tensor_norm(metric, TensorField(spec, 2, lam * comps)).values
        np.testing.assert_allclose(scaled, np.abs(lam) * base, rtol=1e-13, atol=1e-300)

    def test_power_of_two_homogeneity_is_bitwise(self):
        spec = GridSpec(8, 8, TWO_PI, TWO_PI)
        rng = np.random.default_rng(3)
        comps = rng.standard_normal((2, 8, 8))
        base = tensor_norm(flat(spec), TensorField(spec, 1, comps)).values
        scaled = tensor_norm(flat(spec), TensorField(spec, 1, 4.0 * comps)).values
        assert np.array_equal(scaled, 4.0 * base)

    def test_conformal_shift_scaling(self):
        spec = GridSpec(16, 16, TWO_PI, TWO_PI)
        rng = np.random.default_rng(11)
        f = 0.2 * rng.standard_normal(spec.shape)
        comps = rng.standard_normal((2, 2, 2, 16, 16))
        field = TensorField(spec, 3, comps)
        c = 0.37
        n0 = tensor_norm(ConformalMetric(spec, f), field).values
        n1 = tensor_norm(ConformalMetric(spec, f + c), field).values
        np.testing.assert_allclose(n1, np.exp(-3 * c) * n0, rtol=1e-13, atol=1e-300)


class TestLaplaceBeltrami:
    def test_constant(self):
        spec = torus(16)
        out = laplace_beltrami(flat(spec), ScalarField(spec, 2.5 * np.ones(spec.shape)))
        assert np.array_equal(out.values, np.zeros(spec.shape))

    def test_flat_sine(self):
        spec = torus(64)
        x, _ = spec.coords()
        out = laplace_beltrami(flat(spec), ScalarField(spec, np.sin(x)))
        assert np.abs(out.values + np.sin(x)).max() < 0.2 * spec.hx**2

    def test_flat_two_modes(self):
        spec = torus(64)
        x, y = spec.coords()
        u = np.sin(x) + np.cos(2 * y)
        expected = -np.sin(x) - 4 * np.cos(2 * y)
        out = laplace_beltrami(flat(spec), ScalarField(spec, u))
        assert np.abs(out.values - expected).max() < 2.0 * spec.hx**2

    def test_commutes_with_hessian_trace_at_order_two(self):
        # Δ_g u vs g-trace of the rank-2 covariant derivative: O(h²), order ≥ 1.8
        errs = []
        for n in (32, 64):
            spec = torus(n)
            x, y = spec.coords()
            metric = ConformalMetric(spec, 0.1 * np.sin(x) * np.sin(y))
            u = ScalarField(spec, np.cos(x) + 0.5 * np.sin(y))
            hess = covariant_derivative(metric, covariant_derivative(metric, u))
            trace = np.exp(-2 * metric.f) * (hess.components[0, 0] + hess.components[1, 1])
            errs.append(np.abs(laplace_beltrami(metric, u).values - trace).max())
        assert errs[0] / errs[1] > 2**1.8


class TestCurvatureDerivativeNorm:
    def test_flat_all_orders(self):
        spec = torus(16)
        for i in range(3):
            out = curvature_derivative_norm(flat(spec), i)
            assert np.abs(out.values).max() == 0.0

    def test_order_zero_matches_scalar_curvature(self):
        spec = torus(32)
        x, _ = spec.coords()
        metric = ConformalMetric(spec, 0.1 * np.sin(x))
        np.testing.assert_array_equal(
            curvature_derivative_norm(metric, 0).values,
            np.abs(scalar_curvature(metric).values),
        )

    def test_full_contraction_oracle_at_sample_point(self):
        # |Rm|² = R² in 2D, from Rm_{ijkl} = K(g_ik g_jl - g_il g_jk), K = R/2
        spec = torus(32)
        x, _ = spec.coords()
        metric = ConformalMetric(spec, 0.1 * np.sin(x))
        i0, j0 = 5, 7
        r_val = scalar_curvature(metric).values[i0, j0]
        g = np.exp(2 * metric.f[i0, j0]) * np.eye(2)
        ginv = np.linalg.inv(g)
        kappa = r_val / 2.0
        rm = np.zeros((2, 2, 2, 2))
        for i, j, k, l in itertools.product(range(2), repeat=4):
            rm[i, j, k, l] = kappa * (g[i, k] * g[j, l] - g[i, l] * g[j, k])
        norm_sq = 0.0
        for idx in itertools.product(range(2), repeat=4):
            for jdx in itertools.product(range(2), repeat=4):
                weight = 1.0
                for a, b in zip(idx, jdx):
                    weight *= ginv[a, b]
                norm_sq += weight * rm[idx] * rm[jdx]
        assert norm_sq == pytest.approx(r_val**2, rel=1e-12)
        assert curvature_derivative_norm(metric, 0).values[i0, j0] == pytest.approx(
            abs(r_val), rel=1e-12
        )

    def test_constant_factor_first_derivative_zero(self):
        spec = torus(16)
        metric = ConformalMetric(spec, 0.8 * np.ones(spec.shape))
        assert np.abs(curvature_derivative_norm(metric, 1).values).max() == 0.0

    def test_unsupported_order(self):
        with pytest.raises(UnsupportedRankError):
            curvature_derivative_norm(flat(torus(16)), 3)


class TestGeodesicDistance:
    def test_zero_at_source(self):
        spec = torus(16)
        d = geodesic_distance(flat(spec), (4, 9))
        assert d.values[4, 9] == 0.0

    def test_flat_matches_wrapped_euclidean_within_metrication(self):
        spec = torus(32)
        d = geodesic_distance(flat(spec), (0, 0)).values
        true = wrapped_euclidean(spec, 0, 0)
        mask = true > 0
        ratio = d[mask] / true[mask]
        assert ratio.min() >= 1.0 - 1e-12
        assert ratio.max() <= 1.02751

    def test_constant_factor_scales_uniformly(self):
        spec = torus(16)
        c = 0.6
        d0 = geodesic_distance(flat(spec), (3, 3)).values
        d1 = geodesic_distance(
            ConformalMetric(spec, c * np.ones(spec.shape)), (3, 3)
        ).values
        np.testing.assert_allclose(d1, np.exp(c) * d0, rtol=1e-12, atol=1e-300)

    def test_symmetry(self):
        spec = GridSpec(16, 16, TWO_PI, TWO_PI)
        rng = np.random.default_rng(5)
        metric = ConformalMetric(spec, 0.3 * rng.standard_normal(spec.shape))
        a, b = (2, 11), (9, 4)
        d_ab = geodesic_distance(metric, a).values[b]
        d_ba = geodesic_distance(metric, b).values[a]
        assert d_ab == pytest.approx(d_ba, rel=1e-12)

    def test_conformal_shift_scales_distances(self):
        spec = GridSpec(16, 16, TWO_PI, TWO_PI)
        rng = np.random.default_rng(9)
        f = 0.25 * rng.standard_normal(spec.shape)
        c = 0.8
        d0 = geodesic_distance(ConformalMetric(spec, f), (0, 0)).values
        d1 = geodesic_distance(ConformalMetric(spec, f + c), (0, 0)).values
        np.testing.assert_allclose(d1, np.exp(c) * d0, rtol=1e-11, atol=1e-300)

    def test_triangle_inequality_on_graph(self):
        spec = GridSpec(12, 12, TWO_PI, TWO_PI)
        rng = np.random.default_rng(13)
        metric = ConformalMetric(spec, 0.2 * rng.standard_normal(spec.shape))
        da = geodesic_distance(metric, (1, 1)).values
        db = geodesic_distance(metric, (7, 5)).values
        d_ab = da[7, 5]
        assert np.all(da <= db + d_ab + 1e-12)


class TestMetricBall:
    def test_tiny_radius_is_just_center(self):
        spec = torus(16)
        mask = metric_ball(flat(spec), (3, 3), 0.5 * min(spec.hx, spec.hy))
        assert mask.sum() == 1
        assert mask[3, 3]

    def test_flat_unit_ball_brackets_euclidean_disk(self):
        spec = torus(64)
        mask = metric_ball(flat(spec), (10, 20), 1.0)
        true = wrapped_euclidean(spec, 10, 20)
        assert not mask[true > 1.0].any()
        assert mask[true <= 1.0 / 1.02751].all()

    def test_huge_radius_is_full_grid(self):
        spec = torus(16)
        assert metric_ball(flat(spec), (0, 0), 100.0).all()

    def test_nonpositive_radius_rejected(self):
        with pytest.raises(GridError):
            metric_ball(flat(torus(16)), (0, 0), 0.0)


class TestDerivativeNorm:
    def test_order_zero_is_abs(self):
        spec = torus(16)
        x, _ = spec.coords()
        out = derivative_norm(flat(spec), ScalarField(spec, np.sin(x)), 0)
        np.testing.assert_array_equal(out.values, np.abs(np.sin(x)))

    def test_flat_third_derivative_of_sine(self):
        spec = torus(64)
        x, _ = spec.coords()
        out = derivative_norm(flat(spec), ScalarField(spec, np.sin(x)), 3)
        assert np.abs(out.values - np.abs(np.cos(x))).max() < 1.5 * spec.hx**2
