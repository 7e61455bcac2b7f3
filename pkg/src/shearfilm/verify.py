"""Fast invariant checks shared by the ``verify`` command and the test suite."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import functional_H
from .elliptic import capillary_residual, solve_capillary, solve_stokes_dirichlet, solve_stokes_stress
from .equilibrium import FlowState, Snapshot, equilibrium_residual, equilibrium_state
from .forcing import compute_G, geometry_for
from .geometry import Params, build_geometry, div_M_tensor, flat_stress, geometric_identity_residual, grad_tensor, poisson_extend
from .spectral import Grid, diff, l2_norm, make_grid
from .stepper import StepConfig, run


@dataclass
class Check:
    name: str
    value: float
    tol: float

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.value) and self.value <= self.tol)

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"{mark} {self.name}: {self.value:.3e} (tol {self.tol:.1e})"


def band_limited_surface(grid: Grid, amplitude: float, seed: int = 0, k_max: int = 2) -> np.ndarray:
    """Random real surface with modes |n| <= k_max, zero mean and sup norm ``amplitude``."""
    rng = np.random.Generator(np.random.Philox(seed))
    c = np.zeros(grid.surface_shape, dtype=complex)
    band = (np.abs(grid.n1[:, None]) <= k_max) & (np.abs(grid.n2[None, :]) <= k_max)
    band[0, 0] = False
    c[band] = rng.standard_normal(band.sum()) + 1j * rng.standard_normal(band.sum())
    f = grid.to_physical(c, real=False).real
    return f * (amplitude / np.abs(f).max())


def manufactured_stokes(grid: Grid, params: Params):
    """Smooth (u, p) vanishing at the bottom and the data (f1, f2, top velocity, top stress) they generate."""
    X1, X2, X3 = grid.mesh()
    z = X3 + grid.b
    u = np.stack([
        np.sin(X1) * z**2 * (1 + X3),
        np.cos(X2) * z**2,
        0.3 * np.cos(X1 + X2) * z**3,
    ])
    p = np.cos(X1) * np.sin(X2) * (X3**2 + 1) + X3**2
    G = grad_tensor(u, grid)
    S = flat_stress(p, u, grid)
    f1 = params.s(grid.x3) * G[:, 0] + div_M_tensor(S, None, grid)
    f2 = G[0, 0] + G[1, 1] + G[2, 2]
    return u, p, f1, f2, u[..., -1].copy(), S[:, 2, ..., -1].copy()


def smooth_state(grid: Grid, eps: float, t: float = 0.0) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """A smooth time-dependent (u, p, eta) scaled by eps, used for scaling checks."""
    X1, X2, X3 = grid.mesh()
    z = X3 + grid.b
    ct, st = np.cos(t), np.sin(t)
    u = eps * np.stack([
        (np.sin(X1) + 0.5 * st * np.cos(X2)) * z**2,
        (np.cos(X2) + 0.3 * ct * np.sin(X1)) * z**2,
        0.4 * (np.cos(X1 + X2) + 0.2 * st) * z**3,
    ])
    p = eps * (np.cos(X1) * np.sin(X2) * (1 + X3**2) * (1 + 0.5 * st) + 0.3 * ct * X3)
    x1, x2 = X1[..., -1], X2[..., -1]
    eta = eps * (np.cos(x1) * (1 + 0.4 * st) + 0.5 * np.sin(x1 + x2) * ct)
    return u, p, eta


def smooth_history(grid: Grid, eps: float, dt: float = 0.05, count: int = 5) -> list[Snapshot]:
    times = [k * dt for k in range(count)]
    return [Snapshot(t, *smooth_state(grid, eps, t)) for t in times]


def scaling_slope(xs, ys) -> float:
    return float(np.polyfit(np.log(xs), np.log(np.abs(ys)), 1)[0])


def g_scaling(params: Params, grid: Grid, eps_list=(1e-1, 1e-2, 1e-3)) -> float:
    norms = []
    for eps in eps_list:
        u, p, eta = smooth_state(grid, eps)
        state = FlowState(u, p, eta, 0.0)
        cache = geometry_for(u, eta, params, grid, j_min=-np.inf)
        norms.append(compute_G(state, cache, params).norm(grid))
    return scaling_slope(eps_list, norms)


def h_scaling(params: Params, grid: Grid, eps_list=(1e-1, 1e-2, 1e-3), n: int = 2) -> float:
    vals = [functional_H(smooth_history(grid, eps), params, grid, n) for eps in eps_list]
    return scaling_slope(eps_list, vals)


def run_checks(with_run: bool = True) -> list[Check]:
    """Equilibrium, geometry, elliptic and forcing invariants on small grids."""
    out: list[Check] = []
    g16 = make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 17)
    p = Params(sigma=1.0, gamma=0.5)
    res = equilibrium_residual(p, g16)
    out.append(Check("equilibrium residual", max(res.values()), 1e-10))

    g33 = make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 33)
    eta = band_limited_surface(g33, 0.1, seed=1)
    r1, r2 = geometric_identity_residual(build_geometry(eta, g33, p))
    out.append(Check("geometric identities", max(r1, r2), 1e-8))

    ebar, grad = poisson_extend(eta, g33, derivatives=True)
    out.append(Check("poisson extension trace", float(np.abs(ebar[..., -1] - eta).max()), 1e-12))
    lap = diff(ebar, g33, 1, 2) + diff(ebar, g33, 2, 2) + diff(ebar, g33, 3, 2)
    out.append(Check("poisson extension harmonic", float(np.abs(lap).max()), 1e-8))

    f = band_limited_surface(g16, 1.0, seed=2, k_max=5)
    psi = solve_capillary(f, 1.0, 1.0, g16)
    out.append(Check("capillary residual", capillary_residual(psi, f, 1.0, 1.0, g16), 1e-12))

    g8 = make_grid(2 * np.pi, 2 * np.pi, 1.0, 8, 8, 33)
    for gamma in (0.0, 0.5):
        pg = Params(sigma=1.0, gamma=gamma)
        u, pr, f1, f2, top_u, top_s = manufactured_stokes(g8, pg)
        sd = solve_stokes_dirichlet(f1, f2, top_u, pg, g8)
        ss = solve_stokes_stress(f1, f2, top_s, pg, g8)
        err = max(l2_norm(sd.u - u, g8), l2_norm(ss.u - u, g8), l2_norm(ss.p - pr, g8),
                  max(sd.residuals.values()), max(ss.residuals.values()))
        out.append(Check(f"stokes manufactured gamma={gamma}", err, 1e-8))

    if with_run:
        g_small = make_grid(2 * np.pi, 2 * np.pi, 1.0, 8, 8, 9)
        state, _ = equilibrium_state(p, g_small)
        traj = run(state, StepConfig(dt=0.05, t_end=0.2), p, g_small)
        zero = max(float(np.abs(s.u).max() + np.abs(s.eta).max()) for s in traj.states)
        out.append(Check("equilibrium fixed point", zero, 1e-12))

    gs = make_grid(2 * np.pi, 2 * np.pi, 1.0, 16, 16, 17)
    out.append(Check("G quadratic scaling |slope-2|", abs(g_scaling(p, gs) - 2.0), 0.1))
    out.append(Check("H2 cubic scaling |slope-3|", abs(h_scaling(p, gs) - 3.0), 0.2))
    return out
