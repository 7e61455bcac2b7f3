import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shearfilm.spectral import (
    chebyshev_coefficients,
    dealias,
    diff,
    make_grid,
    product,
    sobolev_norm_surface,
    sobolev_norm_volume,
    trace_surface,
)

from conftest import random_band


class TestMakeGrid:
    def test_nodes_and_modes(self):
        g = make_grid(2 * np.pi, 2 * np.pi, 1, 8, 8, 9)
        assert np.abs(g.n1).max() == 4
        assert g.x3[0] == -1.0 and g.x3[-1] == 0.0
        assert np.all(np.diff(g.x3) > 0)

    def test_unit_box_volume(self):
        g = make_grid(1, 1, 1, 4, 4, 5)
        assert g.integrate_volume(np.ones(g.shape)) == pytest.approx(1.0, rel=1e-14)

    def test_surface_area(self):
        g = make_grid(2 * np.pi, np.pi, 0.5, 16, 8, 17)
        assert g.integrate_surface(np.ones(g.surface_shape)) == pytest.approx(2 * np.pi**2, rel=1e-14)

    def test_clenshaw_curtis_exact_for_polynomials(self):
        g = make_grid(1, 1, 2.0, 4, 4, 9)
        for k in range(9):
            exact = -((-2.0) ** (k + 1)) / (k + 1)
            assert g.w3 @ g.x3**k == pytest.approx(exact, rel=1e-12, abs=1e-13)

    @pytest.mark.parametrize("args", [(0, 1, 1, 8, 8, 9), (1, 1, 1, 7, 8, 9), (1, 1, 1, 8, 8, 4), (1, 1, -1, 8, 8, 9)])
    def test_rejects_bad_arguments(self, args):
        with pytest.raises(ValueError):
            make_grid(*args)


class TestDiff:
    def test_horizontal_eigenfunction(self):
        g = make_grid(3.0, 2.0, 1, 16, 8, 9)
        X1, _, _ = g.mesh()
        f = np.sin(2 * np.pi * X1 / g.L1)
        np.testing.assert_allclose(diff(f, g, 1, 2), -(2 * np.pi / g.L1) ** 2 * f, atol=1e-11)

    @pytest.mark.parametrize("axis", [1, 2, 3])
    def test_constant(self, grid8, axis):
        np.testing.assert_allclose(diff(np.full(grid8.shape, 3.0), grid8, axis), 0.0, atol=1e-11)

    def test_cubic_vertical(self, grid8):
        _, _, X3 = grid8.mesh()
        np.testing.assert_allclose(diff(X3**3, grid8, 3, 2), 6 * X3, atol=1e-10)

    def test_mixed_derivatives_commute(self, grid8):
        f = np.random.default_rng(1).standard_normal(grid8.shape)
        a = diff(diff(f, grid8, 1), grid8, 2)
        b = diff(diff(f, grid8, 2), grid8, 1)
        np.testing.assert_allclose(a, b, atol=1e-12)

    def test_surface_vertical_rejected(self, grid8):
        with pytest.raises(ValueError, match="vertical"):
            diff(np.zeros(grid8.surface_shape), grid8, 3)

    def test_order_limit(self, grid8):
        with pytest.raises(ValueError, match="order"):
            diff(np.zeros(grid8.shape), grid8, 1, 9)

    def test_wrong_shape(self, grid8):
        with pytest.raises(ValueError, match="not a field"):
            diff(np.zeros((3, 5)), grid8, 1)


class TestSobolevSurface:
    def test_zero(self, grid8):
        assert sobolev_norm_surface(np.zeros(grid8.surface_shape), grid8, 1.5) == 0.0

    def test_single_mode(self):
        g = make_grid(2 * np.pi, 4 * np.pi, 1, 16, 16, 5)
        X1, X2 = g.surface_mesh()
        xi = np.array([2.0, 1.5])
        f = np.exp(1j * (xi[0] * X1 + xi[1] * X2))
        expected = np.sqrt(g.L1 * g.L2) * np.sqrt(1 + xi @ xi)
        assert sobolev_norm_surface(f, g, 1) == pytest.approx(expected, rel=1e-12)

    def test_s2_matches_derivative_quadrature(self, grid16):
        # H^2 multiplier (1+|xi|^2)^2 = 1 + 2|xi|^2 + |xi|^4
        f = random_band(grid16, seed=3)
        d = lambda a, o: diff(f, grid16, a, o)
        lap = d(1, 2) + d(2, 2)
        quad = grid16.integrate_surface(f**2 + 2 * (d(1, 1) ** 2 + d(2, 1) ** 2) + lap**2)
        assert sobolev_norm_surface(f, grid16, 2) ** 2 == pytest.approx(quad, rel=1e-10)

    def test_parseval(self, grid16):
        f = np.random.default_rng(4).standard_normal(grid16.surface_shape)
        quad = grid16.integrate_surface(f**2)
        assert sobolev_norm_surface(f, grid16, 0) ** 2 == pytest.approx(quad, rel=1e-10)

    @given(seed=st.integers(0, 2**32 - 1))
    @settings(max_examples=25, deadline=None)
    def test_monotone_in_s(self, seed):
        g = make_grid(2 * np.pi, 2 * np.pi, 1, 8, 8, 5)
        f = np.random.default_rng(seed).standard_normal(g.surface_shape)
        norms = [sobolev_norm_surface(f, g, s) for s in np.linspace(-2, 4, 13)]
        assert np.all(np.diff(norms) >= -1e-12 * max(norms))

    def test_rejects_low_index(self, grid8):
        with pytest.raises(ValueError):
            sobolev_norm_surface(np.zeros(grid8.surface_shape), grid8, -3)


class TestSobolevVolume:
    def test_zero(self, grid8):
        assert sobolev_norm_volume(np.zeros(grid8.shape), grid8, 3) == 0.0

    def test_constant(self):
        g = make_grid(2.0, 3.0, 0.5, 8, 8, 9)
        assert sobolev_norm_volume(np.ones(g.shape), g, 2) == pytest.approx(np.sqrt(3.0), rel=1e-13)

    def test_linear_unit_box(self):
        g = make_grid(1, 1, 1, 4, 4, 9)
        _, _, X3 = g.mesh()
        assert sobolev_norm_volume(X3, g, 1) == pytest.approx(np.sqrt(4 / 3), rel=1e-12)

    def test_rejects_fractional(self, grid8):
        with pytest.raises(ValueError):
            sobolev_norm_volume(np.zeros(grid8.shape), grid8, 1.5)


class TestTrace:
    def test_linear_vanishes(self, grid8):
        _, _, X3 = grid8.mesh()
        np.testing.assert_array_equal(trace_surface(X3), 0.0)

    def test_separable(self, grid8):
        X1, X2, X3 = grid8.mesh()
        g = np.cos(X1) * np.sin(2 * X2)
        np.testing.assert_allclose(trace_surface(g * (1 + X3)), g[..., -1], atol=1e-15)

    def test_matches_chebyshev_series(self, grid8):
        f = np.random.default_rng(5).standard_normal(grid8.shape)
        a = chebyshev_coefficients(f)
        # T_k(1) = 1 at the top, T_k(-1) = (-1)^k at the bottom
        np.testing.assert_allclose(a.sum(-1), trace_surface(f), atol=1e-12)
        sign = (-1.0) ** np.arange(grid8.N3)
        np.testing.assert_allclose(a @ sign, f[..., 0], atol=1e-12)


class TestDealiasing:
    def test_product_matches_dense_projection(self):
        g = make_grid(2 * np.pi, 2 * np.pi, 1, 24, 24, 5)
        dense = make_grid(2 * np.pi, 2 * np.pi, 1, 96, 96, 5)
        rng = np.random.default_rng(6)

        def band(grid, c):
            out = np.zeros(grid.surface_shape, dtype=complex)
            for (i, j), v in c.items():
                out[i % grid.N1, j % grid.N2] = v
            return grid.to_physical(out, real=False)

        modes = {(i, j): rng.standard_normal() + 1j * rng.standard_normal()
                 for i in range(-7, 8) for j in range(-7, 8)}
        modes2 = {k: rng.standard_normal() for k in modes}
        f, h = band(g, modes), band(g, modes2)
        fd, hd = band(dense, modes), band(dense, modes2)
        exact = dense.to_spectral(fd * hd)
        got = g.to_spectral(product(f, h, g))
        mask = g.dealias_mask()
        for i in range(g.N1):
            for j in range(g.N2):
                ref = exact[g.n1[i] % dense.N1, g.n2[j] % dense.N2] if mask[i, j] else 0.0
                assert abs(got[i, j] - ref) < 1e-10

    def test_dealias_idempotent(self, grid16):
        f = np.random.default_rng(7).standard_normal(grid16.shape)
        once = dealias(f, grid16)
        np.testing.assert_allclose(dealias(once, grid16), once, atol=1e-14)
