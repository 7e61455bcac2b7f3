"""Per-Fourier-mode Chebyshev collocation systems for the linear Stokes problems.

For a horizontal mode with symbols ``a1 = i k1``, ``a2 = i k2`` the unknowns
are the nodal values of ``(v1, v2, v3, q)`` stacked bottom to top, optionally
followed by the surface amplitude ``zeta``. Rows are

* momentum ``alpha v_i + a1 s v_i [+ s' v3 e1] + d_i q - (D^2 - k^2) v_i - d_i div v``
  at interior nodes,
* ``v_i = 0`` at the bottom node,
* a top boundary row (Dirichlet value or stress balance),
* continuity ``a1 v1 + a2 v2 + D v3`` at every node,
* with a surface unknown, the kinematic row ``(alpha + a1 c) zeta - v3(top)``.

The stress rows with a surface unknown encode
``S(q, v) e3 = (zeta - sigma Lap zeta) e3 - gamma zeta e1 + data``.

The zero mode is singular in this form (no horizontal coupling fixes the
pressure constant) and gets its own reduced system. Rows are scaled to unit
max-norm before inversion; without this the collocation blocks lose several
digits at N3 >= 33.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import SingularModeError
from .spectral import Grid


@dataclass(frozen=True, eq=False)
class ModeSystem:
    grid: Grid = field(repr=False)
    top: str
    surface: bool
    alpha: float
    gamma: float
    sigma: float
    c: float
    sprime: bool
    modes: np.ndarray = field(repr=False)  # (m, 2) indices of the solved half-plane
    partners: np.ndarray = field(repr=False)  # (m, 2) indices of the conjugate modes
    inv: np.ndarray = field(repr=False)  # (m, n, n)
    scale: np.ndarray = field(repr=False)  # (m, n)
    inv0: np.ndarray = field(repr=False)
    scale0: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        return 4 * self.grid.N3 + (1 if self.surface else 0)


def _solved_modes(grid: Grid, keep: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    n1 = grid.n1[:, None]
    n2 = grid.n2[None, :]
    nyq = (np.abs(n1) == grid.N1 // 2) | (np.abs(n2) == grid.N2 // 2)
    ok = ~nyq if keep is None else (keep & ~nyq)
    half = ok & ((n2 > 0) | ((n2 == 0) & (n1 > 0)))
    idx = np.argwhere(half)
    partner = np.stack([(-grid.n1[idx[:, 0]]) % grid.N1, (-grid.n2[idx[:, 1]]) % grid.N2], axis=1)
    return idx, partner


def _equilibrate_invert(mats: np.ndarray, modes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scale = 1.0 / np.abs(mats).max(axis=-1)
    scaled = mats * scale[..., None]
    try:
        inv = np.linalg.inv(scaled)
    except np.linalg.LinAlgError:
        inv = None
    n = mats.shape[-1]
    if inv is None or not np.all(np.isfinite(inv)):
        bad = 0
        for m in range(len(scaled)):
            try:
                np.linalg.inv(scaled[m])
            except np.linalg.LinAlgError:
                bad = m
                break
        raise SingularModeError(tuple(int(x) for x in modes[bad]), "matrix not invertible")
    err = np.abs(np.einsum("mij,mjk->mik", scaled, inv) - np.eye(n)).max(axis=(1, 2))
    worst = int(np.argmax(err)) if len(err) else 0
    if len(err) and err[worst] > 1e-6:
        raise SingularModeError(tuple(int(x) for x in modes[worst]), f"inverse residual {err[worst]:.2e}")
    return inv, scale


def build_mode_system(
    grid: Grid,
    *,
    top: str,
    alpha: float = 0.0,
    gamma: float = 0.0,
    sigma: float = 0.0,
    c: float = 0.0,
    surface: bool = False,
    sprime: bool = False,
    keep: np.ndarray | None = None,
) -> ModeSystem:
    if top not in ("stress", "dirichlet"):
        raise ValueError(f"top condition must be 'stress' or 'dirichlet', got {top!r}")
    if surface and top != "stress":
        raise ValueError("surface coupling requires the stress condition")
    N = grid.N3
    b = grid.b
    x3 = grid.x3
    D = grid.D
    D2 = grid.dpow(2)
    I = np.eye(N)
    s = 0.5 * gamma * (b * b - x3**2)
    sp = -gamma * x3
    modes, partners = _solved_modes(grid, keep)
    m = len(modes)
    n = 4 * N + (1 if surface else 0)
    k1 = grid.k1[modes[:, 0]]
    k2 = grid.k2[modes[:, 1]]
    a1 = (1j * k1)[:, None, None]
    a2 = (1j * k2)[:, None, None]
    ksq = (k1**2 + k2**2)[:, None, None]
    P = [a1 * I, a2 * I, np.broadcast_to(D, (m, N, N)).astype(complex)]

    mat = np.zeros((m, n, n), dtype=complex)
    blk = lambda i, j: (slice(None), slice(i * N, (i + 1) * N), slice(j * N, (j + 1) * N))
    lap = D2 - ksq * I
    for i in range(3):
        mat[blk(i, i)] += alpha * I + a1 * np.diag(s) - lap
        for j in range(3):
            mat[blk(i, j)] -= P[i] @ P[j]
        mat[blk(i, 3)] += P[i]
        mat[blk(3, i)] += P[i]
    if sprime:
        mat[blk(0, 2)] += np.diag(sp)

    top_row = N - 1
    for i in range(3):
        r0 = i * N
        rt = i * N + top_row
        mat[:, r0, :] = 0
        mat[:, r0, r0] = 1.0
        mat[:, rt, :] = 0
        if top == "dirichlet":
            mat[:, rt, rt] = 1.0
    if top == "stress":
        rt = [i * N + top_row for i in range(3)]
        v3t = 2 * N + top_row
        mat[:, rt[0], 0:N] = -D[top_row]
        mat[:, rt[0], v3t] = -a1[:, 0, 0]
        mat[:, rt[1], N:2 * N] = -D[top_row]
        mat[:, rt[1], v3t] = -a2[:, 0, 0]
        mat[:, rt[2], 3 * N + top_row] = 1.0
        mat[:, rt[2], 2 * N:3 * N] = -2 * D[top_row]
        if surface:
            z = 4 * N
            mat[:, rt[0], z] = gamma
            mat[:, rt[2], z] = -(1.0 + sigma * ksq[:, 0, 0])
            mat[:, z, z] = alpha + a1[:, 0, 0] * c
            mat[:, z, v3t] = -1.0
    inv, scale = _equilibrate_invert(mat, modes)

    mat0 = _zero_mode_matrix(grid, top, alpha, sp if sprime else None)
    inv0, scale0 = _equilibrate_invert(mat0[None], np.array([[0, 0]]))
    return ModeSystem(
        grid=grid, top=top, surface=surface, alpha=alpha, gamma=gamma, sigma=sigma, c=c,
        sprime=sprime, modes=modes, partners=partners, inv=inv, scale=scale,
        inv0=inv0[0], scale0=scale0[0],
    )


def _zero_mode_matrix(grid: Grid, top: str, alpha: float, sp: np.ndarray | None) -> np.ndarray:
    N = grid.N3
    D = grid.D
    D2 = grid.dpow(2)
    I = np.eye(N)
    mat = np.zeros((4 * N, 4 * N))
    t = N - 1
    for i in range(2):
        sl = slice(i * N, (i + 1) * N)
        mat[sl, sl] = alpha * I - D2
        mat[i * N, :] = 0
        mat[i * N, i * N] = 1.0
        mat[i * N + t, :] = 0
        if top == "dirichlet":
            mat[i * N + t, i * N + t] = 1.0
        else:
            mat[i * N + t, sl] = -D[t]
    if sp is not None:
        mat[1:N - 1, 2 * N:3 * N] += np.diag(sp)[1:N - 1]
    # v3 from the bottom condition and continuity at the remaining nodes
    mat[2 * N, 2 * N] = 1.0
    mat[2 * N + 1:3 * N, 2 * N:3 * N] = D[1:]
    # q from vertical momentum below the top node plus one closing row
    mat[3 * N:4 * N - 1, 2 * N:3 * N] = (alpha * I - 2 * D2)[:-1]
    mat[3 * N:4 * N - 1, 3 * N:4 * N] = D[:-1]
    if top == "stress":
        mat[4 * N - 1, 3 * N + t] = 1.0
        mat[4 * N - 1, 2 * N:3 * N] = -2 * D[t]
    else:
        mat[4 * N - 1, 3 * N:4 * N] = grid.w3
    return mat


@dataclass
class ModeData:
    """Right-hand sides in Fourier space (coefficients from ``grid.to_spectral``).

    mom: (3, N1, N2, N3) momentum data; used at interior nodes (and, for the
         zero mode, vertical momentum at all nodes but the top)
    cont: (N1, N2, N3) continuity data
    bottom, top: (3, N1, N2) boundary data
    kin: (N1, N2) kinematic data (surface systems only)
    """

    mom: np.ndarray
    cont: np.ndarray
    bottom: np.ndarray
    top: np.ndarray
    kin: np.ndarray | None = None


def solve_modes(system: ModeSystem, data: ModeData, zeta0: float = 0.0):
    """Solve every retained mode; returns spectral (v, q, zeta) arrays.

    ``zeta0`` is the (fixed) zero-mode surface amplitude for surface systems.
    Modes outside the retained set come back as zero.
    """
    grid = system.grid
    N = grid.N3
    N1, N2 = grid.surface_shape
    i1, i2 = system.modes[:, 0], system.modes[:, 1]
    R = np.empty((len(i1), system.size), dtype=complex)
    for i in range(3):
        R[:, i * N:(i + 1) * N] = data.mom[i][i1, i2]
        R[:, i * N] = data.bottom[i][i1, i2]
        R[:, i * N + N - 1] = data.top[i][i1, i2]
    R[:, 3 * N:4 * N] = data.cont[i1, i2]
    if system.surface:
        R[:, 4 * N] = data.kin[i1, i2]
    X = np.einsum("mij,mj->mi", system.inv, R * system.scale)

    v = np.zeros((3, N1, N2, N), dtype=complex)
    q = np.zeros((N1, N2, N), dtype=complex)
    zeta = np.zeros((N1, N2), dtype=complex)
    p1, p2 = system.partners[:, 0], system.partners[:, 1]
    for i in range(3):
        v[i][i1, i2] = X[:, i * N:(i + 1) * N]
        v[i][p1, p2] = np.conj(X[:, i * N:(i + 1) * N])
    q[i1, i2] = X[:, 3 * N:4 * N]
    q[p1, p2] = np.conj(X[:, 3 * N:4 * N])
    if system.surface:
        zeta[i1, i2] = X[:, 4 * N]
        zeta[p1, p2] = np.conj(X[:, 4 * N])

    # zero mode
    r0 = np.empty(4 * N)
    t = N - 1
    for i in range(2):
        r0[i * N:(i + 1) * N] = data.mom[i][0, 0].real
        r0[i * N] = data.bottom[i][0, 0].real
        r0[i * N + t] = data.top[i][0, 0].real
    if system.surface and system.top == "stress":
        r0[t] -= system.gamma * zeta0
    r0[2 * N] = data.bottom[2][0, 0].real
    r0[2 * N + 1:3 * N] = data.cont[0, 0, 1:].real
    r0[3 * N:4 * N - 1] = data.mom[2][0, 0, :-1].real
    if system.top == "stress":
        r0[4 * N - 1] = data.top[2][0, 0].real + (zeta0 if system.surface else 0.0)
    else:
        r0[4 * N - 1] = 0.0
    x0 = system.inv0 @ (r0 * system.scale0)
    for i in range(3):
        v[i][0, 0] = x0[i * N:(i + 1) * N]
    q[0, 0] = x0[3 * N:]
    zeta[0, 0] = zeta0
    return v, q, zeta
