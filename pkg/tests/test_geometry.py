import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shearfilm.errors import DomainCollapse
from shearfilm.geometry import (
    Params,
    build_geometry,
    curvature_defect,
    div_A,
    geometric_identity_residual,
    grad_A,
    mean_curvature,
    poisson_extend,
    stress_A,
    sym_grad_A,
)
from shearfilm.spectral import diff, make_grid

from conftest import random_band


class TestPoissonExtend:
    def test_zero(self, grid8):
        np.testing.assert_array_equal(poisson_extend(np.zeros(grid8.surface_shape), grid8), 0.0)

    def test_constant(self, grid8):
        np.testing.assert_allclose(poisson_extend(np.full(grid8.surface_shape, 0.3), grid8), 0.3, atol=1e-15)

    def test_single_mode_closed_form(self):
        g = make_grid(3.0, 2.0, 1.0, 16, 8, 33)
        X1, X2, X3 = g.mesh()
        k = 2 * np.pi / g.L1
        eta = np.cos(k * X1[..., -1])
        ebar = poisson_extend(eta, g)
        np.testing.assert_allclose(ebar, np.cos(k * X1) * np.exp(k * X3), atol=1e-13)
        lap = sum(diff(ebar, g, a, 2) for a in (1, 2, 3))
        assert np.abs(lap).max() <= 1e-8

    @given(a=st.floats(-3, 3), b=st.floats(-3, 3))
    @settings(max_examples=20, deadline=None)
    def test_linear(self, a, b):
        g = make_grid(2 * np.pi, 2 * np.pi, 1.0, 8, 8, 9)
        f, h = random_band(g, 1), random_band(g, 2)
        lhs = poisson_extend(a * f + b * h, g)
        rhs = a * poisson_extend(f, g) + b * poisson_extend(h, g)
        np.testing.assert_allclose(lhs, rhs, atol=1e-13 * (1 + abs(a) + abs(b)))


class TestBuildGeometry:
    def test_flat(self, grid8):
        c = build_geometry(np.zeros(grid8.surface_shape), grid8)
        np.testing.assert_array_equal(c.A, 0.0)
        np.testing.assert_array_equal(c.B, 0.0)
        np.testing.assert_array_equal(c.J, 1.0)
        np.testing.assert_array_equal(c.K, 1.0)
        np.testing.assert_array_equal(c.N[:2], 0.0)
        np.testing.assert_array_equal(c.N[2], 1.0)

    def test_jacobian_at_origin(self):
        g = make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 17)
        eps = 0.01
        eta = eps * np.cos(g.surface_mesh()[0])
        c = build_geometry(eta, g)
        # etabar = eps cos(x1) e^{x3}, so d3 etabar(0, 0) = eps and btilde = 1 on top
        assert c.J[0, 0, -1] == pytest.approx(1 + eps / g.b + eps, rel=1e-13)

    def test_collapse(self, grid8):
        eta = np.full(grid8.surface_shape, -grid8.b + 1e-6)
        with pytest.raises(DomainCollapse):
            build_geometry(eta, grid8)

    def test_shape_check(self, grid8):
        with pytest.raises(ValueError, match="shape"):
            build_geometry(np.zeros((4, 4)), grid8)

    def test_params_grid_mismatch(self, grid8):
        with pytest.raises(ValueError, match="does not match"):
            build_geometry(np.zeros(grid8.surface_shape), grid8, Params(sigma=1, gamma=0, b=2.0))

    @given(seed=st.integers(0, 2**31), amp=st.floats(0.0, 0.1))
    @settings(max_examples=15, deadline=None)
    def test_geometric_identities(self, seed, amp):
        g = make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 33)
        c = build_geometry(amp * random_band(g, seed, k_max=2), g)
        r1, r2 = geometric_identity_residual(c)
        assert r1 <= 1e-8 and r2 <= 1e-12

    def test_dt_jacobian(self, grid16):
        eta = 0.05 * random_band(grid16, 3)
        deta = 0.2 * random_band(grid16, 4)
        c = build_geometry(eta, grid16, dt_eta=deta)
        h = 1e-3
        c2 = build_geometry(eta + h * deta, grid16)
        # J is affine in eta, so the difference quotient is exact
        dJ = (c2.J - c.J) / h
        expected = c.dt_eta_bar / grid16.b + grid16.btilde * diff(c.dt_eta_bar, grid16, 3)
        np.testing.assert_allclose(dJ, expected, atol=1e-9)


class TestOperators:
    def test_flat_reduces_to_euclidean(self, grid8):
        c = build_geometry(np.zeros(grid8.surface_shape), grid8)
        X1, X2, X3 = grid8.mesh()
        f = np.sin(X1) * np.cos(X2) * X3**2
        np.testing.assert_allclose(grad_A(f, c)[2], 2 * np.sin(X1) * np.cos(X2) * X3, atol=1e-11)
        # divergence-free: curl of (0, 0, psi)
        psi = np.cos(X1 + X2) * (1 + X3) ** 2
        u = np.stack([diff(psi, grid8, 2), -diff(psi, grid8, 1), np.zeros(grid8.shape)])
        assert np.abs(div_A(u, c)).max() < 1e-12

    def test_div_against_closed_form(self):
        g = make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 33)
        X1, X2, X3 = g.mesh()
        eps = 0.05
        c = build_geometry(eps * np.cos(X1[..., -1]), g)
        X = np.stack([np.sin(X1) * (1 + X3) ** 2, np.cos(X2) * X3, np.cos(X1 + X2) * X3**2])
        d1X1 = np.cos(X1) * (1 + X3) ** 2
        d2X2 = -np.sin(X2) * X3
        d3X1 = 2 * np.sin(X1) * (1 + X3)
        d3X3 = 2 * np.cos(X1 + X2) * X3
        e = eps * np.cos(X1) * np.exp(X3)
        A = -eps * np.sin(X1) * np.exp(X3) * (1 + X3)
        J = 1 + e + e * (1 + X3)
        expected = d1X1 + d2X2 + (-A * d3X1 + d3X3) / J
        np.testing.assert_allclose(div_A(X, c), expected, atol=1e-9)

    def test_stress_symmetric(self, grid8):
        c = build_geometry(0.05 * random_band(grid8, 5), grid8)
        u = np.random.default_rng(0).standard_normal((3,) + grid8.shape)
        S = stress_A(np.zeros(grid8.shape), u, c)
        np.testing.assert_allclose(S, np.swapaxes(S, 0, 1), atol=0)
        np.testing.assert_allclose(-S, sym_grad_A(u, c), atol=0)


class TestMeanCurvature:
    def test_zero_and_constant(self, grid8):
        np.testing.assert_array_equal(mean_curvature(np.zeros(grid8.surface_shape), grid8), 0.0)
        assert np.abs(mean_curvature(np.full(grid8.surface_shape, 0.4), grid8)).max() < 1e-15

    def test_small_amplitude(self, grid16):
        eta = 1e-4 * np.cos(grid16.surface_mesh()[0])
        lap = diff(eta, grid16, 1, 2) + diff(eta, grid16, 2, 2)
        assert np.abs(mean_curvature(eta, grid16) - lap).max() <= 1e-9

    def test_one_dimensional_closed_form(self):
        g = make_grid(2 * np.pi, 2 * np.pi, 1.0, 128, 8, 5)
        x = g.surface_mesh()[0]
        eps = 0.2
        eta = eps * np.cos(x)
        d1, d2 = -eps * np.sin(x), -eps * np.cos(x)
        np.testing.assert_allclose(mean_curvature(eta, g), d2 / (1 + d1**2) ** 1.5, atol=1e-10)

    def test_defect_is_difference(self, grid16):
        eta = 0.3 * random_band(grid16, 6, k_max=2)
        lap = diff(eta, grid16, 1, 2) + diff(eta, grid16, 2, 2)
        np.testing.assert_allclose(curvature_defect(eta, grid16), lap - mean_curvature(eta, grid16), atol=1e-12)
