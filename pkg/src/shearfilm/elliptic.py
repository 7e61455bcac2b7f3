"""Capillary and perturbed Stokes solvers on the periodic slab.

The Stokes problems are

    s d1 u + div S(p, u) = f1   in the slab,
    div u = f2                  in the slab,
    u = f3  or  S(p, u) e3 = f3 on the top,
    u = 0                       on the bottom,

with ``S(p, u) = p I - D u`` and ``s`` the shear profile. Since ``s`` depends on
x3 only, each horizontal Fourier mode decouples and is solved by Chebyshev
collocation (see :mod:`shearfilm.modes`). Nyquist modes are discarded.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .errors import IncompatibleDataError
from .geometry import Params, flat_gradient, flat_stress, div_M_tensor, grad_tensor
from .modes import ModeData, build_mode_system, solve_modes
from .spectral import Grid, l2_norm, sobolev_norm_surface, sobolev_norm_volume

COMPAT_TOL = 1e-8


def solve_capillary(f: np.ndarray, sigma: float, g: float, grid: Grid) -> np.ndarray:
    """Solve -sigma Lap psi + g psi = f on the torus by exact modewise division."""
    if not g > 0:
        raise ValueError(f"g must be positive, got {g}")
    if sigma < 0:
        raise ValueError(f"sigma must be non-negative, got {sigma}")
    c = grid.to_spectral(f)
    return grid.to_physical(c / (g + sigma * grid.ksq), real=np.isrealobj(f))


def capillary_residual(psi: np.ndarray, f: np.ndarray, sigma: float, g: float, grid: Grid) -> float:
    """L2 norm of -sigma Lap psi + g psi - f computed in Fourier space."""
    c = grid.to_spectral(psi) * (g + sigma * grid.ksq) - grid.to_spectral(f)
    return float(np.sqrt(grid.area * np.sum(np.abs(c) ** 2)))


@dataclass(frozen=True, eq=False)
class StokesSolution:
    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    grad_p: np.ndarray = field(repr=False)
    residuals: dict = field(default_factory=dict)


@lru_cache(maxsize=16)
def _stokes_system(grid: Grid, gamma: float, top: str):
    return build_mode_system(grid, top=top, gamma=gamma)


def _data(f1, f2, f3, grid: Grid) -> ModeData:
    z = np.zeros((3,) + grid.surface_shape, dtype=complex)
    return ModeData(
        mom=grid.to_spectral(f1),
        cont=grid.to_spectral(f2),
        bottom=z,
        top=grid.to_spectral(f3),
    )


def _check_shapes(f1, f2, f3, grid: Grid):
    f1 = np.asarray(f1, dtype=float)
    f2 = np.asarray(f2, dtype=float)
    f3 = np.asarray(f3, dtype=float)
    if f1.shape != (3,) + grid.shape:
        raise ValueError(f"f1 must have shape {(3,) + grid.shape}, got {f1.shape}")
    if f2.shape != grid.shape:
        raise ValueError(f"f2 must have shape {grid.shape}, got {f2.shape}")
    if f3.shape != (3,) + grid.surface_shape:
        raise ValueError(f"f3 must have shape {(3,) + grid.surface_shape}, got {f3.shape}")
    for name, f in (("f1", f1), ("f2", f2), ("f3", f3)):
        if not np.all(np.isfinite(f)):
            raise ValueError(f"non-finite values in {name}")
    return f1, f2, f3


def stokes_residuals(u, p, f1, f2, f3, params: Params, grid: Grid, top: str) -> dict:
    """L2 residual norms: momentum (interior nodes), divergence, top and bottom conditions.

    The momentum residual is measured with the end nodes zeroed, since the
    collocation replaces those rows by boundary conditions.
    """
    s = params.s(grid.x3)
    G = grad_tensor(u, grid)
    S = flat_stress(p, u, grid)
    mom = s * G[:, 0] + div_M_tensor(S, None, grid) - f1
    div = G[0, 0] + G[1, 1] + G[2, 2] - f2
    if top == "dirichlet":
        topres = u[..., -1] - f3
    else:
        topres = S[:, 2, ..., -1] - f3
    mom[..., 0] = 0.0
    mom[..., -1] = 0.0
    return {
        "momentum": l2_norm(mom, grid),
        "divergence": l2_norm(div, grid),
        "top": l2_norm(topres, grid),
        "bottom": l2_norm(u[..., 0], grid),
    }


def solve_stokes_dirichlet(f1, f2, f3, params: Params, grid: Grid) -> StokesSolution:
    """Perturbed Stokes problem with prescribed top velocity; pressure normalised to zero mean."""
    params.check_grid(grid)
    f1, f2, f3 = _check_shapes(f1, f2, f3, grid)
    flux_in = float(grid.integrate_volume(f2))
    flux_top = float(grid.integrate_surface(f3[2]))
    scale = max(1.0, abs(flux_in), abs(flux_top))
    if abs(flux_in - flux_top) > COMPAT_TOL * scale:
        raise IncompatibleDataError(
            f"integral of f2 ({flux_in:.6e}) differs from top flux of f3 ({flux_top:.6e})"
        )
    system = _stokes_system(grid, float(params.gamma), "dirichlet")
    v, q, _ = solve_modes(system, _data(f1, f2, f3, grid))
    u = grid.to_physical(v)
    p = grid.to_physical(q)
    res = stokes_residuals(u, p, f1, f2, f3, params, grid, "dirichlet")
    return StokesSolution(u=u, p=p, grad_p=flat_gradient(p, grid), residuals=res)


def solve_stokes_stress(f1, f2, f3, params: Params, grid: Grid) -> StokesSolution:
    """Perturbed Stokes problem with prescribed top stress S(p, u) e3 = f3."""
    params.check_grid(grid)
    f1, f2, f3 = _check_shapes(f1, f2, f3, grid)
    system = _stokes_system(grid, float(params.gamma), "stress")
    v, q, _ = solve_modes(system, _data(f1, f2, f3, grid))
    u = grid.to_physical(v)
    p = grid.to_physical(q)
    res = stokes_residuals(u, p, f1, f2, f3, params, grid, "stress")
    return StokesSolution(u=u, p=p, grad_p=flat_gradient(p, grid), residuals=res)


def stokes_estimate_ratio(sol: StokesSolution, f1, f2, f3, grid: Grid, m: int = 0, top: str = "dirichlet") -> float:
    """Left side over right side of the standard elliptic estimate at order m.

    Only reported, never enforced: the estimate's constant is not known.
    """
    f1n = sum(sobolev_norm_volume(f1[i], grid, m) ** 2 for i in range(3)) ** 0.5
    f2n = sobolev_norm_volume(f2, grid, m + 1)
    if top == "dirichlet":
        f3n = sobolev_norm_surface(f3, grid, m + 1.5)
        pn = sum(sobolev_norm_volume(sol.grad_p[i], grid, m) ** 2 for i in range(3)) ** 0.5
    else:
        f3n = sobolev_norm_surface(f3, grid, m + 0.5)
        pn = sobolev_norm_volume(sol.p, grid, m + 1)
    un = sum(sobolev_norm_volume(sol.u[i], grid, m + 2) ** 2 for i in range(3)) ** 0.5
    rhs = f1n + f2n + f3n
    return float((un + pn) / rhs) if rhs > 0 else 0.0
