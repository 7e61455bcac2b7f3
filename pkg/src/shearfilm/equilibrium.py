"""Steady shear flow down the inclined plane and the perturbation state type."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .geometry import Params
from .spectral import Grid, diff

HISTORY_DEPTH = 5

# constant matrix with D U = s'(x3) M
M = np.array([[0.0, 0.0, 1.0], [0.0, 0.0, 0.0], [1.0, 0.0, 0.0]])


def shear_profile(gamma: float, b: float, x3):
    """Parabolic velocity s(x3) = gamma/2 (b^2 - x3^2); vanishes at the bottom."""
    return 0.5 * gamma * (b * b - np.asarray(x3, dtype=float) ** 2)


def shear_profile_derivative(gamma: float, b: float, x3):
    return -gamma * np.asarray(x3, dtype=float)


@dataclass(frozen=True)
class Snapshot:
    t: float
    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)


@dataclass(frozen=True, eq=False)
class FlowState:
    """Perturbation fields (u, p, eta) at time t plus recent snapshots.

    ``history`` is ordered oldest first and always ends with the current
    state, so ``len(history) >= 1``.
    """

    u: np.ndarray = field(repr=False)
    p: np.ndarray = field(repr=False)
    eta: np.ndarray = field(repr=False)
    t: float = 0.0
    history: tuple[Snapshot, ...] = field(default=(), repr=False)
    depth: int = HISTORY_DEPTH
    meta: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self.history:
            object.__setattr__(self, "history", (Snapshot(self.t, self.u, self.p, self.eta),))
        times = [s.t for s in self.history]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("history times must be strictly increasing")

    @classmethod
    def zeros(cls, grid: Grid, t: float = 0.0, depth: int = HISTORY_DEPTH) -> "FlowState":
        return cls(np.zeros((3,) + grid.shape), np.zeros(grid.shape), np.zeros(grid.surface_shape), t, depth=depth)

    def advance(self, u: np.ndarray, p: np.ndarray, eta: np.ndarray, t: float, **meta) -> "FlowState":
        snap = Snapshot(t, u, p, eta)
        hist = (self.history + (snap,))[-self.depth:]
        return FlowState(u, p, eta, t, hist, self.depth, {**self.meta, **meta})

    def with_history(self, history) -> "FlowState":
        return FlowState(self.u, self.p, self.eta, self.t, tuple(history), self.depth, dict(self.meta))


@dataclass(frozen=True)
class Background:
    """Analytic shear background: U = s(x3) e1, P = p_ext - g x3."""

    params: Params

    def U(self, x3) -> np.ndarray:
        x3 = np.asarray(x3, dtype=float)
        z = np.zeros_like(x3)
        return np.stack([shear_profile(self.params.gamma, self.params.b, x3), z, z])

    def P(self, x3) -> np.ndarray:
        return self.params.p_ext - self.params.g * np.asarray(x3, dtype=float)

    def DU(self, x3) -> np.ndarray:
        """Symmetric gradient of U, shape (3, 3, *x3.shape)."""
        sp = shear_profile_derivative(self.params.gamma, self.params.b, x3)
        return M.reshape(3, 3, *([1] * np.ndim(sp))) * sp

    def eulerian(self, state: FlowState, grid: Grid) -> tuple[np.ndarray, np.ndarray]:
        """Total velocity and pressure u + U, p + P on the flattened grid nodes."""
        x3 = np.broadcast_to(grid.x3, grid.shape)
        return state.u + self.U(x3), state.p + self.P(x3)


def equilibrium_state(params: Params, grid: Grid) -> tuple[FlowState, Background]:
    params.check_grid(grid)
    return FlowState.zeros(grid), Background(params)


def equilibrium_residual(params: Params, grid: Grid) -> dict[str, float]:
    """Sup-norm residuals of the full Eulerian system at (U, P, eta = 0).

    Derivatives of the sampled background are taken with the grid operators,
    so the check also exercises the discretization.
    """
    bg = Background(params)
    x3 = np.broadcast_to(grid.x3, grid.shape)
    U = bg.U(x3)
    P = bg.P(x3)
    gradU = np.stack([np.stack([diff(U[i], grid, j) for j in (1, 2, 3)]) for i in range(3)])
    gradP = np.stack([diff(P, grid, j) for j in (1, 2, 3)])
    lapU = np.stack([sum(diff(U[i], grid, j, 2) for j in (1, 2, 3)) for i in range(3)])
    adv = np.einsum("j...,ij...->i...", U, gradU)
    forcing = np.zeros_like(U)
    forcing[0] = params.gamma
    forcing[2] = -params.g
    mom = adv + gradP - params.mu * lapU - forcing
    div = gradU[0, 0] + gradU[1, 1] + gradU[2, 2]
    # flat surface: normal e3, curvature zero
    DU = gradU + np.swapaxes(gradU, 0, 1)
    stress_top = (P[..., -1] * np.eye(3)[:, :, None, None] - params.mu * DU[..., -1])[:, 2]
    target = np.zeros_like(stress_top)
    target[2] = params.p_ext
    r_stress = np.abs(stress_top - target).max()
    # kinematic law with eta = 0: d_t eta = U_3 on the top
    r_kin = np.abs(U[2][..., -1]).max()
    r_bottom = np.abs(U[..., 0]).max()
    return {
        "r_momentum": float(np.abs(mom).max()),
        "r_div": float(np.abs(div).max()),
        "r_stress": float(r_stress),
        "r_kinematic": float(max(r_kin, r_bottom)),
    }
