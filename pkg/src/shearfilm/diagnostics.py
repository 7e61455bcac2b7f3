"""Energy, dissipation and auxiliary functionals, energy budgets and decay fits.

Space-time multi-indices use parabolic counting ``|a| = 2 a0 + a1 + a2``
with a0 the number of time derivatives and a1, a2 horizontal. Horizontal
derivatives are Fourier multipliers, so sums over horizontal multi-indices
collapse into one weight per mode (``horizontal_weight``).
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import stats

from .equilibrium import M, FlowState
from .errors import InsufficientHistory
from .forcing import compute_F, compute_G, geometric_momentum, geometry_for
from .geometry import Params, build_geometry, sym_grad_M
from .spectral import (
    Grid,
    diff,
    horizontal_weight,
    laplacian_surface,
    sobolev_norm_surface,
    sobolev_norm_volume,
)
from .temporal import TimeSeries, check_uniform

log = logging.getLogger(__name__)


# temporal derivatives -------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Derivatives:
    """``u[j]``, ``p[j]``, ``eta[j]`` hold the j-th time derivative at the newest snapshot."""

    t: float
    u: list = field(repr=False)
    p: list = field(repr=False)
    eta: list = field(repr=False)
    flags: dict = field(default_factory=dict)

    @property
    def j_max(self) -> int:
        return len(self.u) - 1


def _snapshots(history):
    snaps = list(history.history) if isinstance(history, FlowState) else list(history)
    if not snaps:
        raise InsufficientHistory("empty history")
    return snaps


def temporal_derivatives(history, j_max: int, params: Params | None = None, grid: Grid | None = None,
                         pde_dt_u: bool = False) -> Derivatives:
    """Backward differences through the last ``j_max + 1`` snapshots.

    The j-th derivative is accurate to order ``j_max + 1 - j``. With
    ``pde_dt_u`` the first derivative of u is instead obtained from the
    momentum equation at the newest snapshot.
    """
    if j_max < 0:
        raise ValueError("j_max must be non-negative")
    snaps = _snapshots(history)
    if len(snaps) < j_max + 1:
        raise InsufficientHistory(f"derivatives up to order {j_max} need {j_max + 1} snapshots, have {len(snaps)}")
    snaps = snaps[len(snaps) - (j_max + 1):]
    ts = TimeSeries([s.t for s in snaps], max_order=j_max)
    us = [s.u for s in snaps]
    ps = [s.p for s in snaps]
    es = [s.eta for s in snaps]
    du = [ts.d(us, j) for j in range(j_max + 1)]
    dp = [ts.d(ps, j) for j in range(j_max + 1)]
    de = [ts.d(es, j) for j in range(j_max + 1)]
    flags = {"dt_u": "history", "scheme": f"backward, order {j_max + 1} - j"}
    if pde_dt_u and j_max >= 1:
        if params is None or grid is None:
            raise ValueError("PDE substitution needs params and grid")
        last = snaps[-1]
        cache = geometry_for(last.u, last.eta, params, grid, j_min=-np.inf)
        du[1] = -geometric_momentum(last.u, last.p, np.zeros_like(last.u), cache, params)
        flags["dt_u"] = "pde"
    return Derivatives(snaps[-1].t, du, dp, de, flags)


# norm helpers ----------------------------------------------------------------------

def _hsum_volume(f: np.ndarray, grid: Grid, order: int) -> float:
    """Sum over horizontal a1 + a2 <= order of ||d^a f||_0^2 (components summed)."""
    c = grid.to_spectral(f)
    w = horizontal_weight(grid, order)[..., None]
    density = (w * np.abs(c) ** 2).sum(axis=(-3, -2))
    return grid.area * float(np.sum(density @ grid.w3))


def _hsum_surface(f: np.ndarray, grid: Grid, order: int, gradient: bool = False) -> float:
    c = grid.to_spectral(f)
    w = horizontal_weight(grid, order)
    if gradient:
        w = w * (np.abs(grid.multiplier(1, 1)) ** 2 + np.abs(grid.multiplier(2, 1)) ** 2)
    return grid.area * float(np.sum(w * np.abs(c) ** 2))


def _vol2(f: np.ndarray, grid: Grid, k: int) -> float:
    """Squared H^k(Omega) norm; vector fields are summed over components."""
    if f.ndim == 4:
        return sum(sobolev_norm_volume(fi, grid, k, max_order=max(k, 1)) ** 2 for fi in f)
    return sobolev_norm_volume(f, grid, k, max_order=max(k, 1)) ** 2


def _surf2(f: np.ndarray, grid: Grid, s: float) -> float:
    return sobolev_norm_surface(f, grid, s) ** 2


def _need(derivs: Derivatives, j: int, what: str):
    if derivs.j_max < j:
        raise InsufficientHistory(f"{what} needs time derivatives up to order {j}, have {derivs.j_max}")


def _check_tier(n: int):
    if int(n) != n or n < 2:
        raise ValueError(f"functional tier n must be an integer >= 2, got {n}")


# energy and dissipation --------------------------------------------------------

def energy_terms(derivs: Derivatives, grid: Grid, n: int, sigma: float) -> dict[str, float]:
    """Every term of the basic and full energies, keyed by stable names."""
    _check_tier(n)
    _need(derivs, n, "energy")
    du, dp, de = derivs.u, derivs.p, derivs.eta
    terms: dict[str, float] = {}
    terms["Ebar_u"] = sum(_hsum_volume(du[a0], grid, 2 * n - 2 * a0) for a0 in range(n + 1))
    terms["Ebar_eta"] = sum(_hsum_surface(de[a0], grid, 2 * n - 2 * a0) for a0 in range(n + 1))
    terms["Ebar_grad_eta"] = sigma * sum(
        _hsum_surface(de[a0], grid, 2 * n - 2 * a0, gradient=True) for a0 in range(n + 1)
    )
    for j in range(n + 1):
        terms[f"E_u_{j}"] = _vol2(du[j], grid, 2 * n - 2 * j)
    for j in range(n):
        terms[f"E_p_{j}"] = _vol2(dp[j], grid, 2 * n - 2 * j - 1)
    terms["E_eta"] = _surf2(de[0], grid, 2 * n)
    terms["E_eta_sigma"] = sigma * _surf2(de[0], grid, 2 * n + 1)
    terms["E_eta_1"] = _surf2(de[1], grid, 2 * n - 1)
    terms["E_eta_1_sigma"] = sigma * _surf2(de[1], grid, 2 * n - 0.5)
    for j in range(2, n + 1):
        terms[f"E_eta_{j}"] = _surf2(de[j], grid, 2 * n - 2 * j + 1.5)
    return terms


def dissipation_terms(derivs: Derivatives, grid: Grid, n: int, sigma: float, gamma: float) -> dict[str, float]:
    """Every term of the basic and full dissipations, keyed by stable names."""
    _check_tier(n)
    _need(derivs, n + 1, "dissipation")
    du, dp, de = derivs.u, derivs.p, derivs.eta
    terms: dict[str, float] = {}
    terms["Dbar_u"] = sum(
        _hsum_volume(sym_grad_M(du[a0], None, grid), grid, 2 * n - 2 * a0) for a0 in range(n + 1)
    )
    for j in range(n + 1):
        terms[f"D_u_{j}"] = _vol2(du[j], grid, 2 * n - 2 * j + 1)
    for j in range(n):
        terms[f"D_p_{j}"] = _vol2(dp[j], grid, 2 * n - 2 * j)
    for j in range(n):
        terms[f"D_eta_{j}"] = (1.0 + gamma**2) * _surf2(de[j], grid, 2 * n - 2 * j - 0.5)
        terms[f"D_eta_{j}_sigma"] = sigma**2 * _surf2(de[j], grid, 2 * n - 2 * j + 1.5)
    terms["D_dt_eta"] = _surf2(de[1], grid, 2 * n - 1)
    terms["D_dt_eta_sigma"] = sigma**2 * _surf2(de[1], grid, 2 * n + 0.5)
    terms["D_dt2_eta"] = _surf2(de[2], grid, 2 * n - 2)
    terms["D_dt2_eta_sigma"] = sigma**2 * _surf2(de[2], grid, 2 * n - 1.5)
    for j in range(3, n + 2):
        terms[f"D_eta_dt{j}"] = _surf2(de[j], grid, 2 * n - 2 * j + 2.5)
    return terms


def _sum_energy(terms: dict[str, float]) -> tuple[float, float]:
    basic = terms["Ebar_u"] + terms["Ebar_eta"] + terms["Ebar_grad_eta"]
    full = sum(terms.values())
    return basic, full


def _sum_dissipation(terms: dict[str, float]) -> tuple[float, float]:
    return terms["Dbar_u"], sum(terms.values())


def energy(history, grid: Grid, n: int = 2, sigma: float = 0.0, derivs: Derivatives | None = None) -> tuple[float, float]:
    """Basic and full energies (Ebar_n^sigma, E_n^sigma) at the newest snapshot."""
    if derivs is None:
        derivs = temporal_derivatives(history, n)
    return _sum_energy(energy_terms(derivs, grid, n, sigma))


def dissipation(history, grid: Grid, n: int = 2, sigma: float = 0.0, gamma: float = 0.0,
                derivs: Derivatives | None = None) -> tuple[float, float]:
    """Basic and full dissipations (Dbar_n, D_n^sigma) at the newest snapshot."""
    if derivs is None:
        derivs = temporal_derivatives(history, n + 1)
    return _sum_dissipation(dissipation_terms(derivs, grid, n, sigma, gamma))


def functional_F(state: FlowState, grid: Grid, n: int = 2) -> float:
    """Transport functional ||eta||^2_{2n+1/2}."""
    _check_tier(n)
    return _surf2(state.eta, grid, 2 * n + 0.5)


def functional_K(state: FlowState, grid: Grid) -> float:
    """``sup|d^a u|^2`` over |a| <= 2 plus the H^3 trace norm of u and ||eta||^2_{5/2}.

    The sup is taken over collocation nodes, so it bounds the true C^2 norm
    from below.
    """
    u = state.u
    sup = float(np.sqrt((u**2).sum(axis=0)).max())
    for a in (1, 2, 3):
        da = np.stack([diff(ui, grid, a) for ui in u])
        sup = max(sup, float(np.sqrt((da**2).sum(axis=0)).max()))
        for b in range(a, 4):
            dab = np.stack([diff(di, grid, b) for di in da])
            sup = max(sup, float(np.sqrt((dab**2).sum(axis=0)).max()))
    trace = sum(_surf2(ui[..., -1], grid, 3) for ui in u)
    return sup**2 + trace + _surf2(state.eta, grid, 2.5)


def functional_H(history, params: Params, grid: Grid, n: int = 2, derivs: Derivatives | None = None) -> float:
    """``int -dt^(n-1) p F^(2,n) J + |dt^n u|^2 (J - 1) / 2`` at the newest snapshot."""
    _check_tier(n)
    snaps = _snapshots(history)
    if derivs is None:
        derivs = temporal_derivatives(snaps, n)
    _need(derivs, n, "H functional")
    F2 = compute_F(snaps, params, grid, r=n).F2
    cache = build_geometry(snaps[-1].eta, grid, params, j_min=-np.inf)
    dn_u = derivs.u[n]
    integrand = -derivs.p[n - 1] * F2 * cache.J + 0.5 * (dn_u**2).sum(axis=0) * cache.Jm1
    return float(grid.integrate_volume(integrand))


# energy budgets ----------------------------------------------------------------

def _bracket(s, params: Params, grid: Grid, J=None) -> float:
    ke = (s.u**2).sum(axis=0)
    if J is not None:
        ke = ke * J
    d1 = diff(s.eta, grid, 1)
    d2 = diff(s.eta, grid, 2)
    surf = 0.5 * s.eta**2 + 0.5 * params.sigma * (d1**2 + d2**2)
    return 0.5 * float(grid.integrate_volume(ke)) + float(grid.integrate_surface(surf))


def _flattened_rates(s, params: Params, grid: Grid) -> float:
    """Dissipation minus right-hand side of the flattened identity at one snapshot."""
    u, p, eta = s.u, s.p, s.eta
    x3 = grid.x3
    Du = sym_grad_M(u, None, grid)
    diss = 0.5 * float(grid.integrate_volume((Du**2).sum(axis=(0, 1))))
    cache = geometry_for(u, eta, params, grid, j_min=-np.inf)
    G = compute_G(FlowState(u, p, eta, s.t), cache, params)
    ut = u[..., -1]
    rhs = params.gamma * float(grid.integrate_volume(x3 * u[2] * u[0]))
    rhs += params.gamma * float(grid.integrate_surface(eta * ut[0]))
    rhs += float(grid.integrate_volume((u * G.G1).sum(axis=0) + p * G.G2))
    load = eta - params.sigma * laplacian_surface(eta, grid)
    rhs += float(grid.integrate_surface(-(G.G3 * ut).sum(axis=0) + load * G.G4))
    return diss - rhs


def _geometric_rates(s, params: Params, grid: Grid) -> float:
    """Dissipation minus right-hand side of the geometric identity with F^(i,0)."""
    u, p, eta = s.u, s.p, s.eta
    cache = build_geometry(eta, grid, params, j_min=-np.inf)
    J = cache.J
    DA = sym_grad_M(u, cache.matrixA, grid)
    diss = 0.5 * float(grid.integrate_volume((DA**2).sum(axis=(0, 1)) * J))
    ut = u[..., -1]
    MN = np.einsum("ij,j...->i...", M, cache.N)
    F = compute_F([s], params, grid, r=0)
    rhs = params.gamma * float(grid.integrate_volume(cache.phi3 * u[2] * u[0] * J))
    rhs += params.gamma * float(grid.integrate_surface(eta * (MN * ut).sum(axis=0)))
    rhs += float(grid.integrate_volume(J * ((u * F.F1).sum(axis=0) + p * F.F2)))
    load = eta - params.sigma * laplacian_surface(eta, grid)
    d1 = diff(eta, grid, 1)
    rhs += float(grid.integrate_surface(-(F.F3 * ut).sum(axis=0)
                                        + load * (0.5 * params.gamma * eta**2 * d1 + F.F4)))
    return diss - rhs


def _bracket_for(form: str, s, params: Params, grid: Grid) -> float:
    if form == "flattened":
        return _bracket(s, params, grid)
    J = build_geometry(s.eta, grid, params, j_min=-np.inf).J
    return _bracket(s, params, grid, J)


def _rates_for(form: str, s, params: Params, grid: Grid) -> float:
    return _flattened_rates(s, params, grid) if form == "flattened" else _geometric_rates(s, params, grid)


def _check_form(form: str):
    if form not in ("flattened", "geometric"):
        raise ValueError(f"form must be 'flattened' or 'geometric', got {form!r}")


def budget_residual(history, params: Params, grid: Grid, form: str = "flattened") -> float:
    """Signed energy-identity residual at the newest snapshot (backward difference in time)."""
    _check_form(form)
    snaps = _snapshots(history)
    if len(snaps) < 2:
        raise InsufficientHistory("the budget needs at least 2 snapshots")
    a, b = snaps[-2], snaps[-1]
    dEdt = (_bracket_for(form, b, params, grid) - _bracket_for(form, a, params, grid)) / (b.t - a.t)
    return dEdt + _rates_for(form, b, params, grid)


def budget_series(snapshots, params: Params, grid: Grid, form: str = "flattened") -> np.ndarray:
    """Residual at every snapshot: centered differences inside, one-sided at the ends."""
    _check_form(form)
    snaps = list(snapshots)
    if len(snaps) < 2:
        raise InsufficientHistory("the budget needs at least 2 snapshots")
    t = np.array([s.t for s in snaps])
    check_uniform(t)
    E = np.array([_bracket_for(form, s, params, grid) for s in snaps])
    dE = np.gradient(E, t, edge_order=1)
    return np.array([dE[k] + _rates_for(form, s, params, grid) for k, s in enumerate(snaps)])


# decay fits ------------------------------------------------------------------------

def fit_decay(t, E, model: str = "exponential", t_min: float = 0.0, min_samples: int = 10) -> dict:
    """Least-squares fit of log E against t (exponential) or log(1 + t) (algebraic).

    Returns ``{"model", "rate" or "exponent", "intercept", "r2", "samples"}``.
    """
    t = np.asarray(t, dtype=float)
    E = np.asarray(E, dtype=float)
    if t.shape != E.shape or t.ndim != 1:
        raise ValueError("t and E must be 1-d arrays of equal length")
    sel = t >= t_min
    t, E = t[sel], E[sel]
    if len(t) < min_samples:
        raise ValueError(f"need at least {min_samples} samples after t >= {t_min}, have {len(t)}")
    if not (np.all(np.isfinite(E)) and np.all(E > 0)):
        raise ValueError("degenerate series: E must be finite and positive")
    if model in ("exponential", "exp"):
        x = t
        key = "rate"
    elif model in ("algebraic", "alg"):
        x = np.log1p(t)
        key = "exponent"
    else:
        raise ValueError(f"unknown decay model {model!r}")
    fit = stats.linregress(x, np.log(E))
    r2 = float(fit.rvalue**2) if np.ptp(np.log(E)) > 0 else 1.0
    return {
        "model": "exponential" if key == "rate" else "algebraic",
        key: float(-fit.slope),
        "intercept": float(fit.intercept),
        "r2": r2,
        "samples": int(len(t)),
    }


# reports ---------------------------------------------------------------------------

class GAccumulator:
    """Running value of the composite functional built from E_2N, D_2N, E_(N+2) and F_2N."""

    def __init__(self, N: int):
        if int(N) != N or N < 3:
            raise ValueError(f"N must be an integer >= 3, got {N}")
        self.N = int(N)
        self.sup_E_high = 0.0
        self.int_D_high = 0.0
        self.sup_E_low = 0.0
        self.sup_F = 0.0
        self._last: tuple[float, float] | None = None

    def update(self, t: float, E_high: float, D_high: float, E_low: float, F_high: float) -> float:
        if self._last is not None:
            t0, d0 = self._last
            if t <= t0:
                raise ValueError("times must increase")
            self.int_D_high += 0.5 * (t - t0) * (d0 + D_high)
        self._last = (t, D_high)
        self.sup_E_high = max(self.sup_E_high, E_high)
        self.sup_E_low = max(self.sup_E_low, (1.0 + t) ** (4 * self.N - 8) * E_low)
        self.sup_F = max(self.sup_F, F_high / (1.0 + t))
        return self.value

    @property
    def value(self) -> float:
        return self.sup_E_high + self.int_D_high + self.sup_E_low + self.sup_F


@dataclass
class FunctionalReport:
    t: float
    n: int
    Ebar: float = math.nan
    E: float = math.nan
    Dbar: float = math.nan
    D: float = math.nan
    F: float = math.nan
    K: float = math.nan
    H: float = math.nan
    G: float = math.nan
    budget: float = math.nan
    flags: dict = field(default_factory=dict)
    terms: dict = field(default_factory=dict)

    SUMMARY = ("Ebar", "E", "Dbar", "D", "F", "K", "H", "G", "budget")

    def row(self) -> dict:
        out = {"t": self.t, "n": self.n}
        out.update({k: getattr(self, k) for k in self.SUMMARY})
        out.update(self.terms)
        out["dt_u"] = self.flags.get("dt_u", "")
        out["complete"] = int(self.flags.get("complete", False))
        return out


def report(state: FlowState, params: Params, grid: Grid, n: int = 2, pde_dt_u: bool = False,
           with_H: bool = True, with_budget: bool = True, g: GAccumulator | None = None) -> FunctionalReport:
    """Evaluate every functional the history allows; missing ones stay NaN."""
    _check_tier(n)
    rep = FunctionalReport(t=float(state.t), n=n)
    rep.F = functional_F(state, grid, n)
    rep.K = functional_K(state, grid)
    snaps = list(state.history)
    if len(snaps) >= n + 2:
        d = temporal_derivatives(snaps, n + 1, params, grid, pde_dt_u=pde_dt_u)
        et = energy_terms(d, grid, n, params.sigma)
        dt_ = dissipation_terms(d, grid, n, params.sigma, params.gamma)
        rep.Ebar, rep.E = _sum_energy(et)
        rep.Dbar, rep.D = _sum_dissipation(dt_)
        rep.terms = {**et, **dt_}
        rep.flags.update(d.flags)
        rep.flags["complete"] = True
        if with_H:
            rep.H = functional_H(snaps, params, grid, n, derivs=d)
        if g is not None:
            rep.G = _g_update(g, snaps, params, grid)
    else:
        rep.flags["complete"] = False
    if with_budget and len(snaps) >= 2:
        rep.budget = budget_residual(snaps, params, grid)
    return rep


def _g_update(g: GAccumulator, snaps, params: Params, grid: Grid) -> float:
    N = g.N
    need = 2 * N + 2
    if len(snaps) < need:
        raise InsufficientHistory(f"G with N={N} needs {need} snapshots in the history, have {len(snaps)}")
    d = temporal_derivatives(snaps, 2 * N + 1)
    _, Eh = _sum_energy(energy_terms(d, grid, 2 * N, params.sigma))
    _, Dh = _sum_dissipation(dissipation_terms(d, grid, 2 * N, params.sigma, params.gamma))
    dl = temporal_derivatives(snaps, N + 2)
    _, El = _sum_energy(energy_terms(dl, grid, N + 2, params.sigma))
    Fh = functional_F(FlowState(snaps[-1].u, snaps[-1].p, snaps[-1].eta, snaps[-1].t), grid, 2 * N)
    return g.update(snaps[-1].t, Eh, Dh, El, Fh)


class DiagnosticsObserver:
    """Stepper observer that collects reports and optionally streams them to CSV."""

    def __init__(self, params: Params, grid: Grid, n: int = 2, csv_path: str | Path | None = None,
                 pde_dt_u: bool = False, with_H: bool = True, with_budget: bool = True,
                 g_tier: int | None = None):
        _check_tier(n)
        self.params = params
        self.grid = grid
        self.n = n
        self.pde_dt_u = pde_dt_u
        self.with_H = with_H
        self.with_budget = with_budget
        self.g = GAccumulator(g_tier) if g_tier is not None else None
        self.reports: list[FunctionalReport] = []
        self.eta_integrals: list[float] = []
        self.csv_path = Path(csv_path) if csv_path is not None else None
        self._fields: list[str] | None = None

    def __call__(self, state: FlowState, step_index: int) -> None:
        rep = report(state, self.params, self.grid, self.n, self.pde_dt_u, self.with_H,
                     self.with_budget, self.g)
        rep.flags["step"] = step_index
        self.reports.append(rep)
        self.eta_integrals.append(float(self.grid.integrate_surface(state.eta)))
        if self.csv_path is not None:
            self._write(rep, step_index)

    def _write(self, rep: FunctionalReport, step_index: int) -> None:
        row = {"step": step_index, **rep.row()}
        if self._fields is None:
            # term columns only exist once the history is deep enough; fix them from a full row
            full = report_columns(self.n)
            self._fields = ["step"] + full
            with open(self.csv_path, "w", newline="") as fh:
                csv.DictWriter(fh, fieldnames=self._fields).writeheader()
        with open(self.csv_path, "a", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=self._fields, restval="")
            w.writerow({k: _fmt(v) for k, v in row.items() if k in self._fields})

    def series(self, key: str, complete_only: bool = True) -> tuple[np.ndarray, np.ndarray]:
        reps = [r for r in self.reports if r.flags.get("complete") or not complete_only]
        return np.array([r.t for r in reps]), np.array([getattr(r, key) for r in reps])


def _fmt(v):
    if isinstance(v, float):
        return "" if math.isnan(v) else repr(v)
    return v


def report_columns(n: int) -> list[str]:
    """Stable CSV column order for tier n."""
    names = ["t", "n", *FunctionalReport.SUMMARY]
    names += ["Ebar_u", "Ebar_eta", "Ebar_grad_eta"]
    names += [f"E_u_{j}" for j in range(n + 1)] + [f"E_p_{j}" for j in range(n)]
    names += ["E_eta", "E_eta_sigma", "E_eta_1", "E_eta_1_sigma"] + [f"E_eta_{j}" for j in range(2, n + 1)]
    names += ["Dbar_u"] + [f"D_u_{j}" for j in range(n + 1)] + [f"D_p_{j}" for j in range(n)]
    for j in range(n):
        names += [f"D_eta_{j}", f"D_eta_{j}_sigma"]
    names += ["D_dt_eta", "D_dt_eta_sigma", "D_dt2_eta", "D_dt2_eta_sigma"]
    names += [f"D_eta_dt{j}" for j in range(3, n + 2)]
    names += ["dt_u", "complete"]
    return names
