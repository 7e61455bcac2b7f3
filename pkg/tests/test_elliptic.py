import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shearfilm.elliptic import (
    capillary_residual,
    solve_capillary,
    solve_stokes_dirichlet,
    solve_stokes_stress,
    stokes_estimate_ratio,
)
from shearfilm.errors import IncompatibleDataError
from shearfilm.geometry import Params, flat_stress
from shearfilm.spectral import l2_norm, make_grid, sobolev_norm_surface
from shearfilm.verify import manufactured_stokes

from conftest import random_band


@pytest.fixture(scope="module")
def g33():
    return make_grid(2 * np.pi, 2 * np.pi, 1.0, 8, 8, 33)


def zero_data(grid):
    return np.zeros((3,) + grid.shape), np.zeros(grid.shape), np.zeros((3,) + grid.surface_shape)


class TestCapillary:
    def test_zero(self, grid8):
        np.testing.assert_array_equal(solve_capillary(np.zeros(grid8.surface_shape), 1.0, 1.0, grid8), 0.0)

    def test_single_mode(self, grid16):
        X1, X2 = grid16.surface_mesh()
        f = np.cos(2 * X1 - 3 * X2)
        np.testing.assert_allclose(solve_capillary(f, 1.0, 1.0, grid16), f / 14.0, atol=1e-15)

    def test_random_residual_and_bound(self, grid16):
        f = random_band(grid16, 8, k_max=5)
        psi = solve_capillary(f, 0.3, 1.0, grid16)
        assert capillary_residual(psi, f, 0.3, 1.0, grid16) <= 1e-12
        assert sobolev_norm_surface(psi, grid16, 2) <= sobolev_norm_surface(f, grid16, 2)

    def test_vanishing_sigma_ladder(self, grid16):
        f = random_band(grid16, 9, k_max=5)
        psi0 = solve_capillary(f, 0.0, 1.0, grid16)
        gaps = [l2_norm(solve_capillary(f, s, 1.0, grid16) - psi0, grid16) for s in (1.0, 0.1, 0.01)]
        assert gaps[0] > gaps[1] > gaps[2] > 0

    @given(seed=st.integers(0, 2**31), g=st.floats(0.5, 4.0), sigma=st.floats(0.0, 2.0), s=st.sampled_from([0, 1, 2]))
    @settings(max_examples=40, deadline=None)
    def test_bound(self, seed, g, sigma, s):
        grid = make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 5)
        f = random_band(grid, seed, k_max=5)
        psi = solve_capillary(f, sigma, g, grid)
        assert sobolev_norm_surface(psi, grid, s) <= sobolev_norm_surface(f, grid, s) / g * (1 + 1e-12)

    def test_rejects_bad_gravity(self, grid8):
        with pytest.raises(ValueError):
            solve_capillary(np.zeros(grid8.surface_shape), 1.0, 0.0, grid8)


class TestStokes:
    @pytest.mark.parametrize("solver", [solve_stokes_dirichlet, solve_stokes_stress])
    def test_zero_data(self, g33, solver):
        sol = solver(*zero_data(g33), Params(sigma=1.0, gamma=0.5), g33)
        assert np.abs(sol.u).max() < 1e-14
        assert np.abs(sol.grad_p).max() < 1e-12

    @pytest.mark.parametrize("gamma", [0.0, 0.5])
    def test_manufactured(self, g33, gamma):
        p = Params(sigma=1.0, gamma=gamma)
        u, pr, f1, f2, top_u, top_s = manufactured_stokes(g33, p)
        sd = solve_stokes_dirichlet(f1, f2, top_u, p, g33)
        ss = solve_stokes_stress(f1, f2, top_s, p, g33)
        assert l2_norm(sd.u - u, g33) <= 1e-8
        # Dirichlet pressure is fixed up to a constant
        dp = sd.p - pr
        assert l2_norm(dp - g33.integrate_volume(dp) / g33.volume, g33) <= 1e-8
        assert l2_norm(ss.u - u, g33) <= 1e-8
        assert l2_norm(ss.p - pr, g33) <= 1e-8
        assert max(sd.residuals.values()) <= 1e-8
        assert max(ss.residuals.values()) <= 1e-8

    def test_dirichlet_pressure_mean_zero(self, g33):
        p = Params(sigma=1.0, gamma=0.5)
        _, _, f1, f2, top_u, _ = manufactured_stokes(g33, p)
        sol = solve_stokes_dirichlet(f1, f2, top_u, p, g33)
        assert abs(g33.integrate_volume(sol.p)) < 1e-10

    def test_constant_normal_stress(self, g33):
        f1, f2, f3 = zero_data(g33)
        f3[2] = 1.0
        sol = solve_stokes_stress(f1, f2, f3, Params(sigma=1.0, gamma=0.0), g33)
        assert np.abs(sol.u).max() < 1e-12
        np.testing.assert_allclose(sol.p, sol.p.mean(), atol=1e-10)
        assert max(sol.residuals.values()) <= 1e-10

    @pytest.mark.parametrize("solver", ["dirichlet", "stress"])
    def test_linear(self, g33, solver):
        p = Params(sigma=1.0, gamma=0.5)
        rng = np.random.default_rng(2)
        f1 = [rng.standard_normal((3,) + g33.shape) for _ in range(2)]
        f2 = [rng.standard_normal(g33.shape) for _ in range(2)]
        f3 = [rng.standard_normal((3,) + g33.surface_shape) for _ in range(2)]
        if solver == "dirichlet":
            for k in range(2):
                f2[k] -= g33.integrate_volume(f2[k]) / g33.volume
                f3[k][2] -= f3[k][2].mean()
        solve = solve_stokes_dirichlet if solver == "dirichlet" else solve_stokes_stress
        a, b = 0.7, -1.3
        s1 = solve(f1[0], f2[0], f3[0], p, g33)
        s2 = solve(f1[1], f2[1], f3[1], p, g33)
        s = solve(a * f1[0] + b * f1[1], a * f2[0] + b * f2[1], a * f3[0] + b * f3[1], p, g33)
        scale = np.abs(s.u).max()
        assert np.abs(s.u - a * s1.u - b * s2.u).max() <= 1e-12 * max(scale, 1.0) * 100

    def test_cross_solver_consistency(self, g33):
        p = Params(sigma=1.0, gamma=0.5)
        _, _, f1, f2, top_u, _ = manufactured_stokes(g33, p)
        sd = solve_stokes_dirichlet(f1, f2, top_u, p, g33)
        top_s = flat_stress(sd.p, sd.u, g33)[:, 2, ..., -1]
        ss = solve_stokes_stress(f1, f2, top_s, p, g33)
        assert l2_norm(ss.u - sd.u, g33) <= 1e-8

    def test_incompatible_dirichlet(self, g33):
        f1, f2, f3 = zero_data(g33)
        f2[:] = 1.0
        with pytest.raises(IncompatibleDataError):
            solve_stokes_dirichlet(f1, f2, f3, Params(sigma=1.0, gamma=0.0), g33)

    def test_shape_check(self, g33):
        f1, f2, f3 = zero_data(g33)
        with pytest.raises(ValueError, match="f2"):
            solve_stokes_stress(f1, f2[..., 1:], f3, Params(sigma=1.0, gamma=0.0), g33)

    def test_estimate_ratio_finite(self, g33):
        p = Params(sigma=1.0, gamma=0.5)
        _, _, f1, f2, top_u, _ = manufactured_stokes(g33, p)
        sol = solve_stokes_dirichlet(f1, f2, top_u, p, g33)
        r = stokes_estimate_ratio(sol, f1, f2, top_u, g33)
        assert np.isfinite(r) and r > 0
