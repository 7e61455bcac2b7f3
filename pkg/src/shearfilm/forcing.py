"""Nonlinear forcing terms of the flattened (G) and geometric (F) linearizations.

Writing the full flattened system as a constant-coefficient linear problem
plus remainder gives the terms ``G^1..G^4``; applying ``d_t^r`` to the full
system and isolating the linearization at ``d_t^r (u, p, eta)`` gives the
commutators ``F^{i,r}``. Each is kept split into its hat (purely geometric),
check (curvature) and tilde (shear) parts.

Signs follow a direct derivation from the full system; the tests verify that
``flattened operator - G`` and ``geometric operator - F`` reproduce the full
residual.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np

from .equilibrium import FlowState, M
from .errors import InsufficientHistory
from .geometry import (
    GeometryCache,
    Params,
    advect_M,
    build_geometry,
    curvature_defect,
    div_M,
    div_M_tensor,
    flat_gradient,
    grad_tensor,
    mean_curvature,
    poisson_extend,
    sym_grad_M,
)
from .spectral import Grid, dealias, diff, laplacian_surface
from .temporal import TimeSeries, differentiation_matrices

EYE = np.eye(3)


def kinematic_rate(u: np.ndarray, eta: np.ndarray, params: Params, grid: Grid) -> np.ndarray:
    """d_t eta = u.N - s(eta) d_1 eta on the top."""
    d1 = diff(eta, grid, 1)
    d2 = diff(eta, grid, 2)
    ut = u[..., -1]
    return ut[2] - ut[0] * d1 - ut[1] * d2 - params.s(eta) * d1


def geometry_for(u: np.ndarray, eta: np.ndarray, params: Params, grid: Grid, j_min: float | None = None) -> GeometryCache:
    """Geometry with d_t eta taken from the kinematic law."""
    kw = {} if j_min is None else {"j_min": j_min}
    return build_geometry(eta, grid, params, dt_eta=kinematic_rate(u, eta, params, grid), **kw)


@dataclass(frozen=True, eq=False)
class ForcingBundle:
    G1_hat: np.ndarray = field(repr=False)
    G1_tilde: np.ndarray = field(repr=False)
    G2: np.ndarray = field(repr=False)
    G3_hat: np.ndarray = field(repr=False)
    G3_check: np.ndarray = field(repr=False)
    G3_tilde: np.ndarray = field(repr=False)
    G4_hat: np.ndarray = field(repr=False)
    G4_tilde: np.ndarray = field(repr=False)

    @property
    def G1(self) -> np.ndarray:
        return self.G1_hat + self.G1_tilde

    @property
    def G3(self) -> np.ndarray:
        return self.G3_hat + self.G3_check + self.G3_tilde

    @property
    def G4(self) -> np.ndarray:
        return self.G4_hat + self.G4_tilde

    def parts(self) -> dict[str, np.ndarray]:
        return {
            "G1_hat": self.G1_hat, "G1_tilde": self.G1_tilde, "G2": self.G2,
            "G3_hat": self.G3_hat, "G3_check": self.G3_check, "G3_tilde": self.G3_tilde,
            "G4_hat": self.G4_hat, "G4_tilde": self.G4_tilde,
        }

    def norm(self, grid: Grid) -> float:
        """Root-sum-square of the L2 norms of all parts."""
        tot = 0.0
        for v in self.parts().values():
            w = np.abs(v) ** 2
            tot += float(np.sum(grid.integrate_volume(w) if v.shape[-3:] == grid.shape else grid.integrate_surface(w)))
        return tot**0.5


def _shear_shift(cache: GeometryCache, params: Params) -> np.ndarray:
    """s(Phi_3) - s(x3) without cancellation."""
    h = cache.eta_bar * cache.btilde
    return -0.5 * params.gamma * h * (2 * cache.grid.x3 + h)


def compute_G(state: FlowState, cache: GeometryCache, params: Params, dealiased: bool = True) -> ForcingBundle:
    """Evaluate the flattened-form forcing at the state, given its geometry."""
    grid = cache.grid
    if not cache.matches(state.eta):
        raise ValueError("geometry cache was built from a different surface elevation")
    u, p, eta = state.u, state.p, state.eta
    A = cache.matrixA
    AmI = cache.AmI
    G = grad_tensor(u, grid)
    SA = p * EYE[:, :, None, None, None] - sym_grad_M(u, A, grid, G)
    DImA = sym_grad_M(u, -AmI, grid, G)

    g1h = (
        -div_M_tensor(DImA, None, grid)
        - div_M_tensor(SA, AmI, grid)
        - advect_M(u, A, G)
        + cache.dt_eta_bar * cache.btilde * cache.K * G[:, 2]
    )
    sphi = params.s(cache.phi3)
    shift = _shear_shift(cache, params)
    g1t = -shift * G[:, 0] - sphi * np.einsum("k...,ik...->i...", AmI[0], G)
    g1t[0] += params.gamma * cache.eta_bar * cache.btilde * u[2]
    g2 = -div_M(u, AmI, grid, G)

    Nm = cache.N.copy()
    Nm[2] = 0.0  # N - e3
    SAt = SA[..., -1]
    g3h = np.einsum("ij...,j...->i...", -SAt, Nm) + eta * Nm - DImA[:, 2, ..., -1]
    if params.sigma > 0:
        H = mean_curvature(eta, grid)
        g3c = -params.sigma * H * Nm
        g3c[2] += params.sigma * curvature_defect(eta, grid)
    else:
        g3c = np.zeros_like(g3h)
    d1 = diff(eta, grid, 1)
    g3t = np.zeros_like(g3h)
    g3t[2] = params.gamma * eta * d1
    g4h = np.einsum("i...,i...->...", u[..., -1], Nm)
    g4t = (params.c - params.s(eta)) * d1

    parts = [g1h, g1t, g2, g3h, g3c, g3t, g4h, g4t]
    if dealiased:
        parts = [dealias(x, grid) for x in parts]
    return ForcingBundle(*parts)


# full-system residuals and linear operators ---------------------------------

def geometric_momentum(u, p, dt_u, cache: GeometryCache, params: Params, v=None, q=None, dt_v=None) -> np.ndarray:
    """Momentum operator of the geometric form.

    With ``v`` omitted this is the full nonlinear momentum residual at (u, p).
    With ``v, q, dt_v`` supplied it is the linearization acting on (v, q)
    with coefficients frozen at (u, eta).
    """
    grid = cache.grid
    if v is None:
        v, q, dt_v = u, p, dt_u
    A = cache.matrixA
    Gv = grad_tensor(v, grid)
    SA = q * EYE[:, :, None, None, None] - sym_grad_M(v, A, grid, Gv)
    sphi = params.s(cache.phi3)
    out = dt_v - cache.dt_eta_bar * cache.btilde * cache.K * Gv[:, 2]
    out = out + advect_M(u, A, Gv)
    out = out + sphi * np.einsum("k...,ik...->i...", A[0], Gv)
    out[0] += params.ds(cache.phi3) * v[2]
    out = out + div_M_tensor(SA, A, grid)
    return out


def geometric_residual(u, p, eta, dt_u, dt_eta, cache: GeometryCache, params: Params) -> dict[str, np.ndarray]:
    """Residual of every equation of the full flattened-coordinate system."""
    grid = cache.grid
    mom = geometric_momentum(u, p, dt_u, cache, params)
    div = div_M(u, cache.matrixA, grid)
    SA = p * EYE[:, :, None, None, None] - sym_grad_M(u, cache.matrixA, grid)
    N = cache.N
    SN = np.einsum("ij...,j...->i...", SA[..., -1], N)
    H = mean_curvature(eta, grid)
    MN = np.einsum("ij,j...->i...", M, N)
    rhs = (eta - params.sigma * H) * N - params.gamma * eta * MN
    kin = dt_eta - np.einsum("i...,i...->...", u[..., -1], N) + params.s(eta) * diff(eta, grid, 1)
    return {"momentum": mom, "divergence": div, "stress": SN - rhs, "kinematic": kin}


def linear_geometric_operator(v, q, zeta, dt_v, dt_zeta, u, cache: GeometryCache, params: Params) -> dict[str, np.ndarray]:
    """Geometric-form linear operator on (v, q, zeta), coefficients frozen at (u, eta).

    The kinematic row is ``d_t zeta - v.N + s(eta) d_1 zeta``, the sign that
    makes the operator the exact linearization of the transport law.
    """
    grid = cache.grid
    eta = cache.eta
    mom = geometric_momentum(u, None, None, cache, params, v=v, q=q, dt_v=dt_v)
    div = div_M(v, cache.matrixA, grid)
    SA = q * EYE[:, :, None, None, None] - sym_grad_M(v, cache.matrixA, grid)
    N = cache.N
    SN = np.einsum("ij...,j...->i...", SA[..., -1], N)
    MN = np.einsum("ij,j...->i...", M, N)
    rhs = (zeta - params.sigma * laplacian_surface(zeta, grid)) * N - params.gamma * zeta * MN
    kin = dt_zeta - np.einsum("i...,i...->...", v[..., -1], N) + params.s(eta) * diff(zeta, grid, 1)
    return {"momentum": mom, "divergence": div, "stress": SN - rhs, "kinematic": kin}


def flattened_operator(v, q, zeta, dt_v, dt_zeta, params: Params, grid: Grid) -> dict[str, np.ndarray]:
    """Left side minus the zeta-coupling of the constant-coefficient linear system."""
    s = params.s(grid.x3)
    G = grad_tensor(v, grid)
    S = q * EYE[:, :, None, None, None] - sym_grad_M(v, None, grid, G)
    mom = dt_v + s * G[:, 0] + div_M_tensor(S, None, grid)
    mom[0] += params.ds(grid.x3) * v[2]
    div = G[0, 0] + G[1, 1] + G[2, 2]
    stress = S[:, 2, ..., -1].copy()
    stress[2] -= zeta - params.sigma * laplacian_surface(zeta, grid)
    stress[0] += params.gamma * zeta
    kin = dt_zeta - v[2][..., -1] + params.c * diff(zeta, grid, 1)
    return {"momentum": mom, "divergence": div, "stress": stress, "kinematic": kin}


# time-differentiated commutators --------------------------------------------

@dataclass(frozen=True, eq=False)
class FTerms:
    r: int
    F1_hat: np.ndarray = field(repr=False)
    F1_tilde: np.ndarray = field(repr=False)
    F2: np.ndarray = field(repr=False)
    F3_hat: np.ndarray = field(repr=False)
    F3_tilde: np.ndarray = field(repr=False)
    F4: np.ndarray = field(repr=False)

    @property
    def F1(self) -> np.ndarray:
        return self.F1_hat + self.F1_tilde

    @property
    def F3(self) -> np.ndarray:
        return self.F3_hat + self.F3_tilde

    def as_dict(self) -> dict[str, np.ndarray]:
        return {"F1": self.F1, "F2": self.F2, "F3": self.F3, "F4": self.F4}


class _Series:
    """Per-snapshot derived quantities for the commutator sums."""

    def __init__(self, snaps, params: Params, grid: Grid, dt_eta_bar_series):
        self.grid = grid
        self.u = [s.u for s in snaps]
        self.p = [s.p for s in snaps]
        self.eta = [s.eta for s in snaps]
        self.caches = [build_geometry(s.eta, grid, params, j_min=-np.inf) for s in snaps]
        self.AmI = [c.AmI for c in self.caches]
        self.gu = [grad_tensor(u, grid) for u in self.u]
        self.gp = [flat_gradient(p, grid) for p in self.p]
        self.X = [sym_grad_M(u, c.matrixA, grid, g) for u, c, g in zip(self.u, self.caches, self.gu)]
        self.N = [c.N for c in self.caches]
        self.ebar = [c.eta_bar for c in self.caches]
        self.tkb = [d * c.btilde * c.K for d, c in zip(dt_eta_bar_series, self.caches)]
        self.uA = [np.einsum("j...,jk...->k...", u, c.matrixA) for u, c in zip(self.u, self.caches)]
        self.sphi = [params.s(c.phi3) for c in self.caches]
        self.A1gu = [np.einsum("k...,ik...->i...", c.matrixA[0], g) for c, g in zip(self.caches, self.gu)]
        self.eta2 = [e * e for e in self.eta]
        self.d1eta = [diff(e, grid, 1) for e in self.eta]
        self.lap = [laplacian_surface(e, grid) for e in self.eta]
        self.defect = [curvature_defect(e, grid) for e in self.eta]


def compute_F(history, params: Params, grid: Grid, r: int, dealiased: bool = True,
              dt_eta_mode: str = "kinematic") -> FTerms:
    """Commutator terms F^{i,r} at the newest snapshot of ``history``.

    Time derivatives come from the interpolating polynomial through the last
    ``r + 2`` snapshots (``r + 1`` at minimum). The extension rate d_t etabar
    at each snapshot is taken from the kinematic law by default, or from the
    same polynomial fit with ``dt_eta_mode="history"``.
    """
    snaps = list(history)
    if r < 0:
        raise ValueError("r must be non-negative")
    m = min(len(snaps), r + 2)
    if len(snaps) < r + 1:
        raise InsufficientHistory(f"F^(.,{r}) needs {r + 1} snapshots, have {len(snaps)}")
    snaps = snaps[-m:]
    times = [s.t for s in snaps]
    ts = TimeSeries(times, max_order=r, min_points=r + 1)
    if dt_eta_mode == "kinematic":
        dte = [kinematic_rate(s.u, s.eta, params, grid) for s in snaps]
    elif dt_eta_mode == "history":
        mats = differentiation_matrices(times, 1) if len(snaps) > 1 else None
        dte = [np.zeros(grid.surface_shape) if mats is None else
               sum(mats[1][a, k] * snaps[k].eta for k in range(len(snaps))) for a in range(len(snaps))]
    else:
        raise ValueError(f"unknown dt_eta_mode {dt_eta_mode!r}")
    dteb = [poisson_extend(d, grid) for d in dte]
    S = _Series(snaps, params, grid, dteb)
    D = ts.d
    C = lambda l: comb(r, l)
    z3 = np.zeros((3,) + grid.shape)
    F1h = z3.copy()
    F1t = z3.copy()
    F2 = np.zeros(grid.shape)
    F3h = np.zeros((3,) + grid.surface_shape)
    F3t = np.zeros((3,) + grid.surface_shape)
    F4 = np.zeros(grid.surface_shape)
    cur = S.caches[-1]
    A = cur.matrixA
    bt = cur.btilde
    for l in range(1, r + 1):
        c = C(l)
        dA = D(S.AmI, l)
        gu = D(S.gu, r - l)
        gp = D(S.gp, r - l)
        X = D(S.X, r - l)
        # hat part of F1
        t = D(S.tkb, l) * gu[:, 2]
        t = t - np.einsum("k...,ik...->i...", D(S.uA, l), gu)
        t = t - np.einsum("ik...,k...->i...", dA, gp)
        t = t + div_M_tensor(X, dA, grid)
        Y = np.einsum("im...,jm...->ij...", dA, gu)  # dA_im d_m u_j
        Y = Y + np.swapaxes(Y, 0, 1)
        t = t + div_M_tensor(Y, A, grid)
        F1h += c * t
        # tilde part of F1
        tt = -D(S.sphi, l) * D(S.A1gu, r - l) - S.sphi[-1] * np.einsum("k...,ik...->i...", dA[0], gu)
        tt[0] += params.gamma * D(S.ebar, l) * bt * D(S.u, r - l)[2]
        F1t += c * tt
        # F2
        F2 += -c * np.einsum("ij...,ij...->...", dA, gu)
        # F3 (top)
        dN = D(S.N, l)
        etap = D(S.eta, r - l) - D(S.p, r - l)[..., -1]
        f3 = etap * dN + np.einsum("ij...,j...->i...", X[..., -1], dN)
        f3 = f3 + np.einsum("ij...,j...->i...", Y[..., -1], S.N[-1])
        F3h += c * f3
        MdN = np.einsum("ij,j...->i...", M, dN)
        F3t -= c * (params.sigma * D(S.lap, r - l) * dN + params.gamma * D(S.eta, r - l) * MdN)
        # F4
        F4 += c * (np.einsum("i...,i...->...", D(S.u, r - l)[..., -1], dN)
                   + 0.5 * params.gamma * D(S.eta2, l) * D(S.d1eta, r - l))
    # curvature remainder, present for every r including r = 0
    for l in range(0, r + 1):
        F3t += C(l) * params.sigma * D(S.defect, l) * D(S.N, r - l)
    parts = [F1h, F1t, F2, F3h, F3t, F4]
    if dealiased:
        parts = [dealias(x, grid) for x in parts]
    return FTerms(r, *parts)
