"""Fourier x Chebyshev discretization of the periodic slab.

The horizontal cross-section is the torus ``(L1 T) x (L2 T)`` sampled on a
uniform ``N1 x N2`` grid; the vertical interval ``[-b, 0]`` is sampled at
Chebyshev-Gauss-Lobatto points ordered from the bottom (index 0) to the free
surface (index ``N3 - 1``).

Fields are plain numpy arrays. A surface field has trailing shape
``(N1, N2)`` and a volume field trailing shape ``(N1, N2, N3)``; any leading
axes (vector or tensor components) are carried along untouched.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

MAX_DIFF_ORDER = 8


def chebyshev_nodes(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Ascending Gauss-Lobatto nodes on [-1, 1] and their differentiation matrix."""
    m = n - 1
    x = np.cos(np.pi * np.arange(n) / m)
    c = np.ones(n)
    c[0] = c[-1] = 2.0
    c *= (-1.0) ** np.arange(n)
    dx = x[:, None] - x[None, :]
    d = np.outer(c, 1.0 / c) / (dx + np.eye(n))
    d -= np.diag(d.sum(axis=1))
    # reverse to ascending order
    return x[::-1].copy(), d[::-1, ::-1].copy()


def clenshaw_curtis_weights(n: int) -> np.ndarray:
    """Quadrature weights on [-1, 1] for the nodes of :func:`chebyshev_nodes`."""
    m = n - 1
    theta = np.pi * np.arange(n) / m
    w = np.zeros(n)
    v = np.ones(n - 2)
    interior = slice(1, n - 1)
    if m % 2 == 0:
        w[0] = w[-1] = 1.0 / (m**2 - 1)
        for k in range(1, m // 2):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k * k - 1)
        v -= np.cos(m * theta[interior]) / (m**2 - 1)
    else:
        w[0] = w[-1] = 1.0 / m**2
        for k in range(1, (m - 1) // 2 + 1):
            v -= 2.0 * np.cos(2 * k * theta[interior]) / (4 * k * k - 1)
    w[interior] = 2.0 * v / m
    return w[::-1].copy()


@dataclass(frozen=True, eq=False)
class Grid:
    L1: float
    L2: float
    b: float
    N1: int
    N2: int
    N3: int
    x1: np.ndarray = field(repr=False)
    x2: np.ndarray = field(repr=False)
    x3: np.ndarray = field(repr=False)
    k1: np.ndarray = field(repr=False)
    k2: np.ndarray = field(repr=False)
    n1: np.ndarray = field(repr=False)
    n2: np.ndarray = field(repr=False)
    D: np.ndarray = field(repr=False)
    w3: np.ndarray = field(repr=False)
    _dpow: tuple = field(repr=False)

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.N1, self.N2, self.N3)

    @property
    def surface_shape(self) -> tuple[int, int]:
        return (self.N1, self.N2)

    @property
    def area(self) -> float:
        return self.L1 * self.L2

    @property
    def volume(self) -> float:
        return self.L1 * self.L2 * self.b

    @property
    def cell_area(self) -> float:
        return self.area / (self.N1 * self.N2)

    @property
    def ksq(self) -> np.ndarray:
        return self.k1[:, None] ** 2 + self.k2[None, :] ** 2

    @property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.ksq)

    @property
    def btilde(self) -> np.ndarray:
        return 1.0 + self.x3 / self.b

    def dpow(self, order: int) -> np.ndarray:
        """Vertical differentiation matrix raised to ``order``."""
        if order < len(self._dpow):
            return self._dpow[order]
        return np.linalg.matrix_power(self.D, order)

    def mesh(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, self.x3, indexing="ij")

    def surface_mesh(self) -> tuple[np.ndarray, np.ndarray]:
        return np.meshgrid(self.x1, self.x2, indexing="ij")

    def dealias_mask(self) -> np.ndarray:
        """2/3-rule mask on the horizontal modes (True = kept)."""
        c1 = (self.N1 - 1) // 3
        c2 = (self.N2 - 1) // 3
        return (np.abs(self.n1)[:, None] <= c1) & (np.abs(self.n2)[None, :] <= c2)

    def multiplier(self, axis: int, order: int) -> np.ndarray:
        """Fourier symbol of ``d^order/dx_axis^order``, broadcastable to (N1, N2).

        Odd orders vanish on the Nyquist mode so real fields stay real.
        """
        if axis == 1:
            k, n, nmax = self.k1, self.n1, self.N1 // 2
        elif axis == 2:
            k, n, nmax = self.k2, self.n2, self.N2 // 2
        else:
            raise ValueError(f"horizontal axis must be 1 or 2, got {axis}")
        m = (1j * k) ** order
        if order % 2 == 1:
            m = np.where(np.abs(n) == nmax, 0.0, m)
        return m[:, None] if axis == 1 else m[None, :]

    # transforms -----------------------------------------------------------

    def _haxes(self, f: np.ndarray) -> tuple[int, int]:
        return (-3, -2) if is_volume(f, self) else (-2, -1)

    def to_spectral(self, f: np.ndarray) -> np.ndarray:
        """Fourier coefficients normalised so that ``f = sum_n c_n exp(i xi.x)``."""
        return np.fft.fft2(f, axes=self._haxes(f)) / (self.N1 * self.N2)

    def to_physical(self, c: np.ndarray, real: bool = True) -> np.ndarray:
        f = np.fft.ifft2(c * (self.N1 * self.N2), axes=self._haxes(c))
        return f.real if real else f

    # quadrature -----------------------------------------------------------

    def integrate_surface(self, f: np.ndarray) -> np.ndarray | float:
        return f.sum(axis=(-2, -1)) * self.cell_area

    def integrate_volume(self, f: np.ndarray) -> np.ndarray | float:
        return np.tensordot(f.sum(axis=(-3, -2)), self.w3, axes=([-1], [0])) * self.cell_area


def make_grid(L1: float, L2: float, b: float, N1: int, N2: int, N3: int) -> Grid:
    for name, val in (("L1", L1), ("L2", L2), ("b", b)):
        if not (val > 0 and math.isfinite(val)):
            raise ValueError(f"{name} must be positive, got {val}")
    for name, val in (("N1", N1), ("N2", N2)):
        if int(val) != val or val < 4 or val % 2:
            raise ValueError(f"{name} must be an even integer >= 4, got {val}")
    if int(N3) != N3 or N3 < 5:
        raise ValueError(f"N3 must be an integer >= 5, got {N3}")
    N1, N2, N3 = int(N1), int(N2), int(N3)
    t, dt = chebyshev_nodes(N3)
    x3 = 0.5 * b * (t - 1.0)
    x3[0], x3[-1] = -b, 0.0
    D = dt * (2.0 / b)
    dpow = [np.eye(N3)]
    for _ in range(MAX_DIFF_ORDER):
        dpow.append(dpow[-1] @ D)
    n1 = np.fft.fftfreq(N1, d=1.0 / N1).round().astype(int)
    n2 = np.fft.fftfreq(N2, d=1.0 / N2).round().astype(int)
    return Grid(
        L1=float(L1), L2=float(L2), b=float(b), N1=N1, N2=N2, N3=N3,
        x1=L1 * np.arange(N1) / N1,
        x2=L2 * np.arange(N2) / N2,
        x3=x3,
        k1=2 * np.pi * n1 / L1,
        k2=2 * np.pi * n2 / L2,
        n1=n1, n2=n2,
        D=D,
        w3=0.5 * b * clenshaw_curtis_weights(N3),
        _dpow=tuple(dpow),
    )


def is_volume(f: np.ndarray, grid: Grid) -> bool:
    return f.ndim >= 3 and tuple(f.shape[-3:]) == grid.shape


def _check_field(f: np.ndarray, grid: Grid) -> bool:
    if is_volume(f, grid):
        return True
    if f.ndim >= 2 and tuple(f.shape[-2:]) == grid.surface_shape:
        return False
    raise ValueError(f"array of shape {f.shape} is not a field on grid {grid.shape}")


def diff(f: np.ndarray, grid: Grid, axis: int, order: int = 1, max_order: int = MAX_DIFF_ORDER) -> np.ndarray:
    """Spectral derivative along ``axis`` (1, 2 horizontal; 3 vertical)."""
    volume = _check_field(f, grid)
    if order < 0 or order > max_order:
        raise ValueError(f"derivative order {order} outside [0, {max_order}]")
    if order == 0:
        return f.copy()
    if axis == 3:
        if not volume:
            raise ValueError("vertical derivative requested on a surface field")
        return f @ grid.dpow(order).T
    if axis not in (1, 2):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    m = grid.multiplier(axis, order)
    if volume:
        m = m[..., None]
    return grid.to_physical(grid.to_spectral(f) * m, real=np.isrealobj(f))


def gradient(f: np.ndarray, grid: Grid) -> np.ndarray:
    """Stacked first derivatives: surface -> (2, ...), volume -> (3, ...)."""
    axes = (1, 2, 3) if _check_field(f, grid) else (1, 2)
    return np.stack([diff(f, grid, a) for a in axes])


def laplacian_surface(f: np.ndarray, grid: Grid) -> np.ndarray:
    return grid.to_physical(-grid.ksq * grid.to_spectral(f), real=np.isrealobj(f))


def dealias(f: np.ndarray, grid: Grid) -> np.ndarray:
    mask = grid.dealias_mask()
    if is_volume(f, grid):
        mask = mask[..., None]
    return grid.to_physical(grid.to_spectral(f) * mask, real=np.isrealobj(f))


def product(f: np.ndarray, g: np.ndarray, grid: Grid) -> np.ndarray:
    """Dealiased pointwise product of two fields."""
    return dealias(dealias(f, grid) * dealias(g, grid), grid)


def trace_surface(f: np.ndarray) -> np.ndarray:
    """Restriction of a volume field to the top boundary x3 = 0."""
    return f[..., -1].copy()


def trace_bottom(f: np.ndarray) -> np.ndarray:
    return f[..., 0].copy()


def chebyshev_coefficients(f: np.ndarray) -> np.ndarray:
    """Chebyshev series coefficients along the vertical axis (last axis).

    Coefficient ``a_k`` multiplies ``T_k(t)`` with ``t = 1 + 2 x3 / b``.
    """
    n = f.shape[-1]
    m = n - 1
    vals = f[..., ::-1]  # t descending: t_j = cos(pi j / m)
    j = np.arange(n)
    cosmat = np.cos(np.pi * np.outer(j, j) / m)
    w = np.ones(n)
    w[0] = w[-1] = 0.5
    a = (vals * w) @ cosmat.T * (2.0 / m)
    a[..., 0] *= 0.5
    a[..., -1] *= 0.5
    return a


def l2_norm(f: np.ndarray, grid: Grid) -> float:
    if _check_field(f, grid):
        return float(np.sqrt(np.sum(grid.integrate_volume(np.abs(f) ** 2))))
    return float(np.sqrt(np.sum(grid.integrate_surface(np.abs(f) ** 2))))


def sobolev_norm_surface(f: np.ndarray, grid: Grid, s: float) -> float:
    """Fourier-multiplier H^s norm on the torus (components summed)."""
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite values in surface field")
    if s < -2:
        raise ValueError(f"Sobolev index {s} below -2")
    c = grid.to_spectral(f)
    weight = (1.0 + grid.ksq) ** s
    return float(np.sqrt(grid.area * np.sum(weight * np.abs(c) ** 2)))


def horizontal_weight(grid: Grid, order: int) -> np.ndarray:
    """Sum over a1 + a2 <= order of |symbol(d1^a1 d2^a2)|^2, shape (N1, N2)."""
    total = np.zeros(grid.surface_shape)
    for a1 in range(order + 1):
        m1 = np.abs(grid.multiplier(1, a1)) ** 2
        for a2 in range(order + 1 - a1):
            total = total + m1 * np.abs(grid.multiplier(2, a2)) ** 2
    return total


def sobolev_norm_volume(f: np.ndarray, grid: Grid, k: int, max_order: int = MAX_DIFF_ORDER) -> float:
    """Integer-order H^k(Omega) norm: sum over all |alpha| <= k of ||d^alpha f||^2."""
    if int(k) != k or k < 0:
        raise ValueError(f"volume Sobolev order must be a non-negative integer, got {k}")
    if k > max_order:
        raise ValueError(f"volume Sobolev order {k} exceeds max derivative order {max_order}")
    if not is_volume(f, grid):
        raise ValueError("sobolev_norm_volume expects a volume field")
    if not np.all(np.isfinite(f)):
        raise ValueError("non-finite values in volume field")
    total = 0.0
    for a3 in range(k + 1):
        g = f if a3 == 0 else f @ grid.dpow(a3).T
        c = grid.to_spectral(g)
        w = horizontal_weight(grid, k - a3)[..., None]
        density = (w * np.abs(c) ** 2).sum(axis=(-3, -2))
        total += grid.area * float(np.sum(density @ grid.w3))
    return math.sqrt(total)
