"""Poisson extension, the flattening map and the A-dependent operators.

The free surface ``x3 = eta(x')`` is pulled back to the fixed slab through
``Phi(x) = (x1, x2, x3 + etabar(x) * (1 + x3/b))`` where ``etabar`` is the
harmonic extension of ``eta`` into the lower half space. All quantities of the
map are evaluated on the collocation grid and collected in a
:class:`GeometryCache`.

Matrix fields have shape ``(3, 3, N1, N2, N3)`` and act through the generic
helpers ``grad_M``, ``div_M``, ``sym_grad_M``, ``div_M_tensor``; the
``*_A`` wrappers plug in the matrix of the current geometry.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainCollapse
from .spectral import Grid, dealias, diff, is_volume

J_MIN = 0.1


@dataclass(frozen=True)
class Params:
    """Physical parameters (viscosity and gravity scaled to one by default)."""

    sigma: float
    gamma: float
    b: float = 1.0
    L1: float = 2 * np.pi
    L2: float = 2 * np.pi
    g: float = 1.0
    mu: float = 1.0
    p_ext: float = 0.0
    # speed of the linear surface transport term; None means s(0) = gamma b^2 / 2
    transport_speed: float | None = None

    def __post_init__(self):
        if not (self.sigma >= 0 and np.isfinite(self.sigma)):
            raise ValueError(f"sigma must be >= 0, got {self.sigma}")
        if not (self.gamma >= 0 and np.isfinite(self.gamma)):
            raise ValueError(f"gamma must be >= 0, got {self.gamma}")
        for name in ("b", "L1", "L2", "g", "mu"):
            val = getattr(self, name)
            if not (val > 0 and np.isfinite(val)):
                raise ValueError(f"{name} must be positive, got {val}")

    @property
    def c(self) -> float:
        if self.transport_speed is not None:
            return float(self.transport_speed)
        return 0.5 * self.gamma * self.b**2

    def s(self, z):
        return 0.5 * self.gamma * (self.b**2 - np.asarray(z) ** 2)

    def ds(self, z):
        return -self.gamma * np.asarray(z)

    def check_grid(self, grid: Grid) -> None:
        for name in ("b", "L1", "L2"):
            if not np.isclose(getattr(self, name), getattr(grid, name), rtol=1e-12, atol=0):
                raise ValueError(f"params.{name}={getattr(self, name)} does not match grid.{name}={getattr(grid, name)}")


# harmonic extension --------------------------------------------------------

def poisson_extend(eta: np.ndarray, grid: Grid, derivatives: bool = False):
    """Harmonic extension sum_n etahat(n) exp(i xi.x') exp(|xi| x3).

    With ``derivatives=True`` returns ``(etabar, grad)`` where ``grad`` stacks
    the three first derivatives, evaluated exactly in Fourier space.
    """
    c = grid.to_spectral(eta)
    decay = np.exp(grid.kabs[..., None] * grid.x3)
    cb = c[..., None] * decay
    ebar = grid.to_physical(cb)
    if not derivatives:
        return ebar
    d1 = grid.to_physical(cb * grid.multiplier(1, 1)[..., None])
    d2 = grid.to_physical(cb * grid.multiplier(2, 1)[..., None])
    d3 = grid.to_physical(cb * grid.kabs[..., None])
    # the trace is eta itself; overwrite to remove round-off
    ebar[..., -1] = eta
    return ebar, np.stack([d1, d2, d3])


@dataclass(frozen=True, eq=False)
class GeometryCache:
    grid: Grid = field(repr=False)
    eta: np.ndarray = field(repr=False)
    dt_eta: np.ndarray = field(repr=False)
    eta_bar: np.ndarray = field(repr=False)
    dt_eta_bar: np.ndarray = field(repr=False)
    grad_eta_bar: np.ndarray = field(repr=False)
    btilde: np.ndarray = field(repr=False)
    A: np.ndarray = field(repr=False)
    B: np.ndarray = field(repr=False)
    J: np.ndarray = field(repr=False)
    Jm1: np.ndarray = field(repr=False)
    K: np.ndarray = field(repr=False)
    N: np.ndarray = field(repr=False)
    AmI: np.ndarray = field(repr=False)
    min_J: float = 0.0

    @property
    def matrixA(self) -> np.ndarray:
        return self.AmI + np.eye(3)[:, :, None, None, None]

    @property
    def JA(self) -> np.ndarray:
        """J times the matrix A, which has the cancellation-free entries [[J,0,-A],[0,J,-B],[0,0,1]]."""
        z = np.zeros_like(self.J)
        one = np.ones_like(self.J)
        return np.array([[self.J, z, -self.A], [z, self.J, -self.B], [z, z, one]])

    @property
    def phi3(self) -> np.ndarray:
        return self.grid.x3 + self.eta_bar * self.btilde

    def matches(self, eta: np.ndarray) -> bool:
        return self.eta.shape == eta.shape and np.array_equal(self.eta, eta)


def build_geometry(
    eta: np.ndarray,
    grid: Grid,
    params: Params | None = None,
    dt_eta: np.ndarray | None = None,
    j_min: float = J_MIN,
) -> GeometryCache:
    eta = np.asarray(eta, dtype=float)
    if eta.shape != grid.surface_shape:
        raise ValueError(f"eta has shape {eta.shape}, expected {grid.surface_shape}")
    if params is not None:
        params.check_grid(grid)
    if not np.all(np.isfinite(eta)):
        raise ValueError("non-finite surface elevation")
    b = grid.b
    ebar, g = poisson_extend(eta, grid, derivatives=True)
    bt = np.broadcast_to(grid.btilde, grid.shape)
    A = g[0] * bt
    B = g[1] * bt
    Jm1 = ebar / b + g[2] * bt
    J = 1.0 + Jm1
    min_J = float(J.min())
    if min_J < j_min:
        raise DomainCollapse(min_J, j_min)
    K = 1.0 / J
    Km1 = -Jm1 * K
    z = np.zeros(grid.shape)
    AmI = np.array([[z, z, -A * K], [z, z, -B * K], [z, z, Km1]])
    if dt_eta is None:
        dt_eta = np.zeros(grid.surface_shape)
        dt_ebar = np.zeros(grid.shape)
    else:
        dt_eta = np.asarray(dt_eta, dtype=float)
        dt_ebar = poisson_extend(dt_eta, grid)
    N = np.stack([-diff(eta, grid, 1), -diff(eta, grid, 2), np.ones(grid.surface_shape)])
    return GeometryCache(
        grid=grid, eta=eta.copy(), dt_eta=dt_eta, eta_bar=ebar, dt_eta_bar=dt_ebar,
        grad_eta_bar=g, btilde=bt, A=A, B=B, J=J, Jm1=Jm1, K=K, N=N, AmI=AmI, min_J=min_J,
    )


# operators with a general coefficient matrix --------------------------------

def grad_tensor(u: np.ndarray, grid: Grid) -> np.ndarray:
    """``G[i, j] = d_j u_i`` for a vector volume field u of shape (3, N1, N2, N3)."""
    return np.stack([np.stack([diff(u[i], grid, j) for j in (1, 2, 3)]) for i in range(3)])


def flat_gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    return np.stack([diff(f, grid, j) for j in (1, 2, 3)])


def grad_M(f: np.ndarray, M: np.ndarray | None, grid: Grid) -> np.ndarray:
    g = flat_gradient(f, grid)
    if M is None:
        return g
    return np.einsum("ij...,j...->i...", M, g)


def div_M(X: np.ndarray, M: np.ndarray | None, grid: Grid, G: np.ndarray | None = None) -> np.ndarray:
    if G is None:
        G = grad_tensor(X, grid)
    if M is None:
        return G[0, 0] + G[1, 1] + G[2, 2]
    return np.einsum("ij...,ij...->...", M, G)


def sym_grad_M(u: np.ndarray, M: np.ndarray | None, grid: Grid, G: np.ndarray | None = None) -> np.ndarray:
    """``(D_M u)_ij = M_ik d_k u_j + M_jk d_k u_i``."""
    if G is None:
        G = grad_tensor(u, grid)
    T = G if M is None else np.einsum("jk...,ik...->ij...", M, G)
    # T[i, j] = M_jk d_k u_i
    return T + np.swapaxes(T, 0, 1)


def div_M_tensor(T: np.ndarray, M: np.ndarray | None, grid: Grid) -> np.ndarray:
    """``(div_M T)_i = M_jk d_k T_ij``."""
    out = []
    for i in range(3):
        d = [flat_gradient(T[i, j], grid) for j in range(3)]  # d[j][k]
        d = np.stack(d)
        if M is None:
            out.append(d[0, 0] + d[1, 1] + d[2, 2])
        else:
            out.append(np.einsum("jk...,jk...->...", M, d))
    return np.stack(out)


def advect_M(u: np.ndarray, M: np.ndarray | None, G: np.ndarray) -> np.ndarray:
    """``(u . grad_M v)_i = u_j M_jk d_k v_i`` given ``G[i, k] = d_k v_i``."""
    w = u if M is None else np.einsum("jk...,j...->k...", M, u)
    return np.einsum("k...,ik...->i...", w, G)


def grad_A(f: np.ndarray, cache: GeometryCache) -> np.ndarray:
    return grad_M(f, cache.matrixA, cache.grid)


def div_A(X: np.ndarray, cache: GeometryCache) -> np.ndarray:
    return div_M(X, cache.matrixA, cache.grid)


def sym_grad_A(u: np.ndarray, cache: GeometryCache) -> np.ndarray:
    return sym_grad_M(u, cache.matrixA, cache.grid)


def stress_A(p: np.ndarray, u: np.ndarray, cache: GeometryCache) -> np.ndarray:
    return p * np.eye(3)[:, :, None, None, None] - sym_grad_A(u, cache)


def div_A_tensor(T: np.ndarray, cache: GeometryCache) -> np.ndarray:
    return div_M_tensor(T, cache.matrixA, cache.grid)


def flat_stress(p: np.ndarray, u: np.ndarray, grid: Grid) -> np.ndarray:
    return p * np.eye(3)[:, :, None, None, None] - sym_grad_M(u, None, grid)


# surface geometry -----------------------------------------------------------

def _slope_flux(eta: np.ndarray, grid: Grid, defect: bool) -> np.ndarray:
    g1, g2 = diff(eta, grid, 1), diff(eta, grid, 2)
    q = g1 * g1 + g2 * g2
    root = np.sqrt(1.0 + q)
    if defect:
        # 1 - 1/sqrt(1+q) written without cancellation
        w = q / (root * (1.0 + root))
    else:
        w = 1.0 / root
    return np.stack([dealias(g1 * w, grid), dealias(g2 * w, grid)])


def mean_curvature(eta: np.ndarray, grid: Grid) -> np.ndarray:
    """div(grad eta / sqrt(1 + |grad eta|^2)), with the flux dealiased."""
    f = _slope_flux(eta, grid, defect=False)
    return diff(f[0], grid, 1) + diff(f[1], grid, 2)


def curvature_defect(eta: np.ndarray, grid: Grid) -> np.ndarray:
    """Laplacian minus mean curvature, evaluated without subtractive cancellation."""
    f = _slope_flux(eta, grid, defect=True)
    return diff(f[0], grid, 1) + diff(f[1], grid, 2)


def geometric_identity_residual(cache: GeometryCache) -> tuple[float, float]:
    """Sup norms of d_k(J A_ik) over the slab and of J A_jk e3.e_k - N_j on the top."""
    grid = cache.grid
    JA = cache.JA
    r1 = 0.0
    for i in range(3):
        s = sum(diff(JA[i, k], grid, k + 1) for k in range(3))
        r1 = max(r1, float(np.abs(s).max()))
    top = JA[:, 2, :, :, -1]
    r2 = float(np.abs(top - cache.N).max())
    return r1, r2


def check_volume(f: np.ndarray, grid: Grid) -> None:
    if not is_volume(f, grid):
        raise ValueError(f"expected a volume field on {grid.shape}, got shape {f.shape}")
