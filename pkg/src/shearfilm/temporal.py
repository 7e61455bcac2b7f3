"""Time derivatives from a short history of equally spaced snapshots.

Derivatives are those of the polynomial interpolating the last ``m``
snapshots, which is the backward-difference formula of order ``m - j`` for
the j-th derivative at the newest time.
"""

from __future__ import annotations

from math import factorial

import numpy as np

from .errors import InsufficientHistory

SPACING_RTOL = 1e-12


def check_uniform(times, rtol: float = SPACING_RTOL) -> float:
    times = np.asarray(times, dtype=float)
    if len(times) < 2:
        return 0.0
    dt = np.diff(times)
    h = dt.mean()
    if np.any(dt <= 0):
        raise ValueError("snapshot times must be strictly increasing")
    # float times carry absolute round-off of order ulp(t), so scale by |t| too
    if np.max(np.abs(dt - h)) > rtol * max(abs(h), np.abs(times).max()):
        raise ValueError(f"non-uniform snapshot spacing: steps {dt}")
    return float(h)


def fd_weights(times, at: float, order: int) -> np.ndarray:
    """Weights w with sum_k w_k f(t_k) = d^order/dt^order of the interpolant at ``at``."""
    times = np.asarray(times, dtype=float)
    m = len(times)
    if order >= m:
        raise InsufficientHistory(f"derivative of order {order} needs {order + 1} snapshots, have {m}")
    if order == 0 and np.any(np.isclose(times, at, rtol=0, atol=1e-14 * max(1.0, abs(at)))):
        w = np.zeros(m)
        w[int(np.argmin(np.abs(times - at)))] = 1.0
        return w
    h = (times[-1] - times[0]) / max(m - 1, 1) if m > 1 else 1.0
    tau = (times - at) / h
    V = np.vander(tau, m, increasing=True).T  # V[p, k] = tau_k^p
    rhs = np.zeros(m)
    rhs[order] = factorial(order)
    w = np.linalg.solve(V, rhs)
    return w / h**order


def differentiation_matrices(times, max_order: int) -> list[np.ndarray]:
    """``mats[j][a, k]``: weight of snapshot k in the j-th derivative at snapshot a."""
    times = np.asarray(times, dtype=float)
    return [np.array([fd_weights(times, ta, j) for ta in times]) for j in range(max_order + 1)]


def apply_weights(w: np.ndarray, series) -> np.ndarray:
    out = None
    for wk, f in zip(w, series):
        if wk == 0.0:
            continue
        out = wk * f if out is None else out + wk * f
    if out is None:
        out = np.zeros_like(series[0])
    return out


class TimeSeries:
    """Snapshot-time derivatives at the newest time of a list of field samples."""

    def __init__(self, times, max_order: int, min_points: int | None = None):
        times = np.asarray(times, dtype=float)
        need = max_order + 1 if min_points is None else min_points
        if len(times) < need:
            raise InsufficientHistory(f"need {need} snapshots for order {max_order}, have {len(times)}")
        check_uniform(times)
        self.times = times
        self.max_order = max_order
        self.weights = [fd_weights(times, times[-1], j) for j in range(max_order + 1)]

    def d(self, series, order: int) -> np.ndarray:
        if order == 0:
            return np.asarray(series[-1])
        if order > self.max_order:
            raise InsufficientHistory(f"order {order} exceeds configured maximum {self.max_order}")
        return apply_weights(self.weights[order], series)
