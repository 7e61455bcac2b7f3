"""IMEX time stepping of the perturbation system in flattened coordinates.

The stiff constant-coefficient part (viscous stress, shear advection by
``s(x3)``, the ``s' v3 e1`` coupling, the stress/kinematic surface coupling)
is treated implicitly and solved mode by mode; everything that depends on the
surface geometry rides in the explicit forcing ``G``.

imex1: backward Euler on the linear part, forward Euler on ``G``.
imex2: second-order backward differentiation with ``2 G^n - G^{n-1}``
extrapolation; its first step falls back to imex1.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, Iterable

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .elliptic import solve_stokes_stress
from .equilibrium import FlowState, HISTORY_DEPTH
from .errors import DomainCollapse, ShearFilmError, SolverError
from .forcing import compute_G, geometry_for
from .geometry import J_MIN, Params, build_geometry, div_M, grad_M, flat_gradient
from .modes import ModeData, build_mode_system, solve_modes
from .spectral import Grid, l2_norm, laplacian_surface

log = logging.getLogger(__name__)

SCHEMES = ("imex1", "imex2")


@dataclass(frozen=True)
class StepConfig:
    dt: float
    t_end: float = 0.0
    scheme: str = "imex1"
    projection_tol: float = 1e-12
    j_min: float = J_MIN
    history_depth: int = HISTORY_DEPTH

    def __post_init__(self):
        if not (self.dt > 0 and math.isfinite(self.dt)):
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not (self.t_end >= 0 and math.isfinite(self.t_end)):
            raise ValueError(f"t_end must be non-negative, got {self.t_end}")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}, got {self.scheme!r}")
        if self.history_depth < 2:
            raise ValueError("history depth must be at least 2")

    @property
    def n_steps(self) -> int:
        n = self.t_end / self.dt
        k = int(round(n))
        return k if abs(n - k) <= 1e-9 * max(1.0, n) else int(math.ceil(n))


@lru_cache(maxsize=32)
def implicit_operator(grid: Grid, alpha: float, gamma: float, sigma: float, c: float):
    """Factorized implicit system; cached per (grid, coefficients)."""
    return build_mode_system(
        grid, top="stress", alpha=alpha, gamma=gamma, sigma=sigma, c=c,
        surface=True, sprime=True, keep=grid.dealias_mask(),
    )


def _check_params(params: Params, grid: Grid) -> None:
    params.check_grid(grid)
    if params.g != 1.0 or params.mu != 1.0:
        raise ValueError("the stepper works in units with g = mu = 1; rescale the parameters")


def _cfl_advisory(state: FlowState, cfg: StepConfig, params: Params, grid: Grid) -> float:
    speed = float(np.abs(state.u).max()) + abs(params.s(0.0))
    h = min(grid.L1 / grid.N1, grid.L2 / grid.N2)
    cfl = cfg.dt * speed / h
    if cfl > 1.0:
        log.warning("advective CFL number %.3g exceeds 1 (dt=%g)", cfl, cfg.dt)
    else:
        log.debug("advective CFL number %.3g", cfl)
    return cfl


def _forcing(state: FlowState, params: Params, grid: Grid, j_min: float):
    cache = geometry_for(state.u, state.eta, params, grid, j_min=j_min)
    return compute_G(state, cache, params)


def step(state: FlowState, cfg: StepConfig, params: Params, grid: Grid) -> FlowState:
    """Advance one time step; returns a new state with the history extended."""
    _check_params(params, grid)
    dt = cfg.dt
    Gn = _forcing(state, params, grid, cfg.j_min)
    use2 = cfg.scheme == "imex2" and len(state.history) >= 2 and \
        abs((state.history[-1].t - state.history[-2].t) - dt) <= 1e-12 * max(1.0, abs(state.t))
    spec = grid.to_spectral
    if use2:
        prev = state.history[-2]
        Gp = _forcing(FlowState(prev.u, prev.p, prev.eta, prev.t), params, grid, cfg.j_min)
        alpha = 1.5 / dt
        ext = lambda a, b: 2.0 * a - b
        mom = (2.0 * state.u - 0.5 * prev.u) / dt + ext(Gn.G1, Gp.G1)
        kin = (2.0 * state.eta - 0.5 * prev.eta) / dt + ext(Gn.G4, Gp.G4)
        cont = ext(Gn.G2, Gp.G2)
        top = ext(Gn.G3, Gp.G3)
    else:
        alpha = 1.0 / dt
        mom = state.u / dt + Gn.G1
        kin = state.eta / dt + Gn.G4
        cont = Gn.G2
        top = Gn.G3
    op = implicit_operator(grid, alpha, float(params.gamma), float(params.sigma), float(params.c))
    data = ModeData(
        mom=spec(mom), cont=spec(cont),
        bottom=np.zeros((3,) + grid.surface_shape, dtype=complex),
        top=spec(top), kin=spec(kin),
    )
    eta_mean = float(state.eta.mean())
    v, q, zeta = solve_modes(op, data, zeta0=eta_mean)
    u = grid.to_physical(v)
    p = grid.to_physical(q)
    eta = grid.to_physical(zeta)
    eta += eta_mean - eta.mean()
    if not (np.all(np.isfinite(u)) and np.all(np.isfinite(p)) and np.all(np.isfinite(eta))):
        raise SolverError(f"non-finite values after step from t={state.t:.6g} (last good time)")
    n = int(state.meta.get("step", 0)) + 1
    t0 = float(state.meta.get("t0", state.t - (n - 1) * dt))
    t = t0 + n * dt
    base = state
    if state.depth != cfg.history_depth:
        base = FlowState(state.u, state.p, state.eta, state.t, state.history[-cfg.history_depth:],
                         cfg.history_depth, dict(state.meta))
    return base.advance(u, p, eta, t, step=n, t0=t0, scheme=("imex2" if use2 else "imex1"))


# initial data -----------------------------------------------------------------

def _flat_poisson_inverse(grid: Grid) -> np.ndarray:
    """Per-mode inverses of the flat operator with psi(top) = 0, d3 psi(bottom) given."""
    N = grid.N3
    D = grid.D
    D2 = grid.dpow(2)
    a1 = grid.multiplier(1, 1)
    a2 = grid.multiplier(2, 1)
    lam = (a1**2 + a2**2).real  # Nyquist-consistent -k^2
    mats = np.broadcast_to(D2, grid.surface_shape + (N, N)).copy()
    mats += lam[..., None, None] * np.eye(N)
    mats[..., 0, :] = D[0]
    mats[..., -1, :] = 0.0
    mats[..., -1, -1] = 1.0
    return np.linalg.inv(mats)


def project_initial_data(u0, eta0, params: Params, grid: Grid, tol: float = 1e-12,
                         j_min: float = J_MIN) -> FlowState:
    """Make (u0, eta0) admissible: zero-mean surface and A-divergence-free velocity.

    The velocity is corrected by an A-gradient, ``u = u0 - grad_A psi``, with
    ``div_A grad_A psi = div_A u0``, ``psi = 0`` on the top and the normal
    component of the correction matching ``u0`` on the bottom. The tangential
    bottom trace of ``grad_A psi`` is not controlled; its size is reported in
    ``meta["bottom_slip"]``. The initial pressure solves the flat stress
    problem with the surface load of the projected state.
    """
    _check_params(params, grid)
    u0 = np.asarray(u0, dtype=float)
    eta0 = np.asarray(eta0, dtype=float)
    if u0.shape != (3,) + grid.shape or eta0.shape != grid.surface_shape:
        raise ValueError("initial data have the wrong shape for this grid")
    if not (np.all(np.isfinite(u0)) and np.all(np.isfinite(eta0))):
        raise ValueError("non-finite initial data")
    if np.any(eta0 <= -grid.b):
        raise ValueError(f"initial surface reaches the bottom: min eta0 = {eta0.min():.6g} <= -b")
    eta = eta0 - eta0.mean()
    cache = build_geometry(eta, grid, params, j_min=j_min)
    A = cache.matrixA
    rhs = div_M(u0, A, grid)
    iters = 0
    if np.abs(u0).max() == 0.0:
        u = u0.copy()
        psi = np.zeros(grid.shape)
    else:
        Pinv = _flat_poisson_inverse(grid)
        shape = grid.shape

        def apply(x):
            psi = x.reshape(shape)
            g = grad_M(psi, A, grid)
            out = div_M(g, A, grid)
            out[..., 0] = g[2][..., 0]
            out[..., -1] = psi[..., -1]
            return out.ravel()

        def precond(x):
            r = x.reshape(shape)
            c = grid.to_spectral(r)
            sol = np.einsum("abij,abj->abi", Pinv, c)
            return grid.to_physical(sol).ravel()

        b = rhs.copy()
        b[..., 0] = u0[2][..., 0]
        b[..., -1] = 0.0
        n = b.size
        Aop = LinearOperator((n, n), matvec=apply, dtype=float)
        Mop = LinearOperator((n, n), matvec=precond, dtype=float)
        x0 = precond(b.ravel())
        count = [0]

        def cb(_):
            count[0] += 1

        bn = np.linalg.norm(b)
        if np.linalg.norm(apply(x0) - b.ravel()) <= tol * max(bn, 1e-300):
            x, info = x0, 0
        else:
            x, info = gmres(Aop, b.ravel(), x0=x0, M=Mop, rtol=tol, atol=0.0, restart=60,
                            maxiter=50, callback=cb, callback_type="pr_norm")
        iters = count[0]
        if info != 0:
            res = np.linalg.norm(apply(x) - b.ravel()) / max(bn, 1e-300)
            if res > max(1e3 * tol, 1e-8):
                raise SolverError(f"initial projection did not converge (relative residual {res:.2e})")
        psi = x.reshape(shape)
        u = u0 - grad_M(psi, A, grid)
    displacement = l2_norm(u0 - u, grid)
    slip = float(np.abs(u[..., 0]).max())
    # initial pressure from the flat stress problem
    x3 = grid.x3
    f1 = np.zeros_like(u)
    f1[0] = -params.ds(x3) * u[2]
    f2 = flat_gradient(u[0], grid)[0] + flat_gradient(u[1], grid)[1] + flat_gradient(u[2], grid)[2]
    f3 = np.zeros((3,) + grid.surface_shape)
    f3[2] = eta - params.sigma * laplacian_surface(eta, grid)
    f3[0] = -params.gamma * eta
    if np.abs(u).max() == 0.0 and np.abs(eta).max() == 0.0:
        p = np.zeros(grid.shape)
    else:
        p = solve_stokes_stress(f1, f2, f3, params, grid).p
    meta = {
        "projection_displacement": displacement,
        "projection_iterations": iters,
        "bottom_slip": slip,
        "eta_mean_removed": float(eta0.mean()),
        "step": 0,
        "t0": 0.0,
    }
    return FlowState(u, p, eta, 0.0, meta=meta)


# driver -------------------------------------------------------------------------

@dataclass
class Trajectory:
    states: list = field(default_factory=list)
    times: list = field(default_factory=list)
    termination: dict = field(default_factory=dict)
    final: FlowState | None = None


Observer = Callable[[FlowState, int], None]


def run(state0: FlowState, cfg: StepConfig, params: Params, grid: Grid,
        observers: Iterable[Observer] = (), cadence: int = 1, keep_states: bool = True,
        raise_errors: bool = True) -> Trajectory:
    """Step from ``state0`` to ``cfg.t_end``, calling observers every ``cadence`` steps."""
    _check_params(params, grid)
    if cadence < 1:
        raise ValueError("cadence must be >= 1")
    observers = list(observers)
    state = state0
    if "t0" not in state.meta:
        state = FlowState(state.u, state.p, state.eta, state.t, state.history, cfg.history_depth,
                          {**state.meta, "step": 0, "t0": state.t})
    elif state.depth != cfg.history_depth:
        state = FlowState(state.u, state.p, state.eta, state.t, state.history[-cfg.history_depth:],
                          cfg.history_depth, dict(state.meta))
    traj = Trajectory()

    def emit(s: FlowState, k: int):
        if keep_states:
            traj.states.append(s)
            traj.times.append(s.t)
        for ob in observers:
            ob(s, k)

    emit(state, 0)
    _cfl_advisory(state, cfg, params, grid)
    n = cfg.n_steps
    status, message = "completed", ""
    k = 0
    try:
        for k in range(1, n + 1):
            state = step(state, cfg, params, grid)
            if k % cadence == 0 or k == n:
                emit(state, k)
    except DomainCollapse as exc:
        status, message = "domain_collapse", str(exc)
        if raise_errors:
            raise
    except ShearFilmError as exc:
        status, message = "solver_error", str(exc)
        if raise_errors:
            raise
    if keep_states and (not traj.states or traj.states[-1] is not state):
        traj.states.append(state)
        traj.times.append(state.t)
    traj.final = state
    traj.termination = {
        "status": status,
        "message": message,
        "t_final": float(state.t),
        "steps": int(state.meta.get("step", 0)),
    }
    return traj
