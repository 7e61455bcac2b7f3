"""Run configuration, initial-data presets and experiment orchestration.

Configs are JSON documents::

    {
      "kind": "single",
      "grid": {"N1": 16, "N2": 16, "N3": 17},
      "physics": {"sigma": 1.0, "gamma": 0.05, "b": 1.0, "L1": 6.283185307179586, "L2": 6.283185307179586},
      "initial": {"preset": "single-mode", "xi": [1, 0], "epsilon": 1e-3},
      "step": {"dt": 0.01, "t_end": 10.0, "scheme": "imex1"},
      "cadence": 10,
      "output_dir": "runs/decay"
    }

Random presets draw from ``numpy.random.Generator(numpy.random.Philox(seed))``.
Relative output directories are resolved against ``$SHEARFILM_OUTPUT_ROOT``
when that variable is set.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import DiagnosticsObserver, budget_residual, fit_decay
from .equilibrium import FlowState
from .errors import ConfigError
from .geometry import Params
from .io import CheckpointWriter
from .spectral import Grid, diff, l2_norm, make_grid
from .stepper import StepConfig, project_initial_data, run

log = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "SHEARFILM_OUTPUT_ROOT"
GENERATOR = "numpy.random.Philox"
KINDS = ("single", "sigma_sweep", "gamma_sweep", "convergence")
PRESETS = ("equilibrium", "single-mode", "random-band")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SOLVER = 3
EXIT_CHECK = 4


@dataclass
class RunConfig:
    N1: int
    N2: int
    N3: int
    sigma: float
    gamma: float
    initial: dict
    dt: float
    t_end: float
    b: float = 1.0
    L1: float = 2 * np.pi
    L2: float = 2 * np.pi
    transport_speed: float | None = None
    scheme: str = "imex1"
    projection_tol: float = 1e-12
    j_min: float = 0.1
    history_depth: int = 5
    cadence: int = 1
    output_dir: str | None = None
    kind: str = "single"
    tier: int = 2
    g_tier: int | None = None
    fit_t_min: float = 1.0
    checkpoints: bool = False
    sigmas: list | None = None
    gammas: list | None = None
    dts: list | None = None

    def grid(self) -> Grid:
        return make_grid(self.L1, self.L2, self.b, self.N1, self.N2, self.N3)

    def params(self) -> Params:
        return Params(sigma=self.sigma, gamma=self.gamma, b=self.b, L1=self.L1, L2=self.L2,
                      transport_speed=self.transport_speed)

    def step_config(self) -> StepConfig:
        return StepConfig(dt=self.dt, t_end=self.t_end, scheme=self.scheme,
                          projection_tol=self.projection_tol, j_min=self.j_min,
                          history_depth=self.history_depth)

    def to_json(self) -> dict:
        d = asdict(self)
        return {
            "kind": d["kind"],
            "grid": {k: d[k] for k in ("N1", "N2", "N3")},
            "physics": {k: d[k] for k in ("sigma", "gamma", "b", "L1", "L2", "transport_speed")},
            "initial": d["initial"],
            "step": {k: d[k] for k in ("dt", "t_end", "scheme", "projection_tol", "j_min", "history_depth")},
            "diagnostics": {k: d[k] for k in ("tier", "g_tier", "fit_t_min", "checkpoints")},
            "cadence": d["cadence"],
            "output_dir": d["output_dir"],
            **{k: d[k] for k in ("sigmas", "gammas", "dts") if d[k] is not None},
        }


# parsing ------------------------------------------------------------------------------

_SECTIONS = {
    "grid": {"N1": int, "N2": int, "N3": int},
    "physics": {"sigma": float, "gamma": float, "b": float, "L1": float, "L2": float, "transport_speed": float},
    "step": {"dt": float, "t_end": float, "scheme": str, "projection_tol": float, "j_min": float,
             "history_depth": int},
    "diagnostics": {"tier": int, "g_tier": int, "fit_t_min": float, "checkpoints": bool},
}
_TOP = {"kind": str, "cadence": int, "output_dir": str, "initial": dict, "sigmas": list, "gammas": list,
        "dts": list}
_REQUIRED = {"grid": ("N1", "N2", "N3"), "physics": ("sigma", "gamma"), "step": ("dt", "t_end")}


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"%s"\s*:' % re.escape(key), text)
    return text.count("\n", 0, m.start()) + 1 if m else None


def _err(text: str, key: str, msg: str) -> ConfigError:
    line = _line_of(text, key) if text else None
    where = f"line {line}: " if line else ""
    return ConfigError(f"{where}{msg}")


def _coerce(text: str, key: str, val, typ):
    if val is None and key in ("transport_speed", "g_tier", "output_dir"):
        return None
    if typ is bool:
        if not isinstance(val, bool):
            raise _err(text, key, f"{key} must be true or false")
        return val
    if typ is int:
        if isinstance(val, bool) or not isinstance(val, int):
            raise _err(text, key, f"{key} must be an integer, got {val!r}")
        return val
    if typ is float:
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise _err(text, key, f"{key} must be a number, got {val!r}")
        return float(val)
    if not isinstance(val, typ):
        raise _err(text, key, f"{key} must be a {typ.__name__}, got {val!r}")
    return val


def parse_config(doc: dict | str, text: str = "") -> RunConfig:
    """Validate a config document (or JSON text); errors name the offending line when known."""
    if isinstance(doc, str):
        text = doc
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"line {exc.lineno}: invalid JSON ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    kw: dict = {}
    for key in doc:
        if key not in _SECTIONS and key not in _TOP:
            raise _err(text, key, f"unknown key {key!r}")
    for sec, fields in _SECTIONS.items():
        body = doc.get(sec, {})
        if not isinstance(body, dict):
            raise _err(text, sec, f"{sec} must be an object")
        for key in _REQUIRED.get(sec, ()):
            if key not in body:
                raise _err(text, sec, f"missing required key {sec}.{key}")
        for key, val in body.items():
            if key not in fields:
                raise _err(text, key, f"unknown key {sec}.{key}")
            kw[key] = _coerce(text, key, val, fields[key])
    if "initial" not in doc:
        raise ConfigError("missing required key 'initial'")
    for key, typ in _TOP.items():
        if key in doc:
            kw[key] = _coerce(text, key, doc[key], typ)
    cfg = RunConfig(**kw)
    validate(cfg, text)
    return cfg


def load_config(path: str | Path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def validate(cfg: RunConfig, text: str = "") -> None:
    if cfg.kind not in KINDS:
        raise _err(text, "kind", f"kind must be one of {KINDS}, got {cfg.kind!r}")
    if cfg.cadence < 1:
        raise _err(text, "cadence", "cadence must be >= 1")
    for name in ("N1", "N2", "N3"):
        if getattr(cfg, name) < (3 if name == "N3" else 2):
            raise _err(text, name, f"{name} too small")
    try:
        cfg.grid()
        cfg.params()
        cfg.step_config()
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if cfg.tier < 2:
        raise _err(text, "tier", "tier must be >= 2")
    if cfg.g_tier is not None and cfg.g_tier < 3:
        raise _err(text, "g_tier", "g_tier must be >= 3")
    _validate_initial(cfg, text)
    if cfg.kind == "sigma_sweep":
        _check_list(cfg.sigmas, "sigmas", text, nonneg=True)
        if cfg.sigmas[-1] != 0:
            raise _err(text, "sigmas", "sigma list must end with 0")
    if cfg.kind == "gamma_sweep":
        _check_list(cfg.gammas, "gammas", text, nonneg=True)
    if cfg.kind == "convergence":
        _check_list(cfg.dts, "dts", text, positive=True)


def _check_list(vals, name, text, nonneg=False, positive=False):
    if not vals:
        raise _err(text, name, f"{name} must be a non-empty list")
    for v in vals:
        if isinstance(v, bool) or not isinstance(v, (int, float)):
            raise _err(text, name, f"{name} entries must be numbers")
        if nonneg and v < 0:
            raise _err(text, name, f"{name} entries must be >= 0")
        if positive and v <= 0:
            raise _err(text, name, f"{name} entries must be > 0")


def _validate_initial(cfg: RunConfig, text: str) -> None:
    ini = cfg.initial
    preset = ini.get("preset")
    if preset not in PRESETS:
        raise _err(text, "preset", f"initial.preset must be one of {PRESETS}, got {preset!r}")
    allowed = {"equilibrium": {"preset"},
               "single-mode": {"preset", "xi", "epsilon"},
               "random-band": {"preset", "seed", "k_max", "epsilon"}}[preset]
    for key in ini:
        if key not in allowed:
            raise _err(text, key, f"unknown key initial.{key} for preset {preset}")
    kmax_grid = min((cfg.N1 - 1) // 3, (cfg.N2 - 1) // 3)
    if preset == "single-mode":
        xi = ini.get("xi")
        if not (isinstance(xi, list) and len(xi) == 2 and all(isinstance(x, int) and not isinstance(x, bool) for x in xi)):
            raise _err(text, "xi", "initial.xi must be a pair of integer wavenumbers")
        if xi == [0, 0]:
            raise _err(text, "xi", "initial.xi must be non-zero (the mean of eta is fixed at 0)")
        if max(abs(xi[0]), abs(xi[1])) > kmax_grid:
            raise _err(text, "xi", f"initial.xi exceeds the dealiased band |n| <= {kmax_grid}")
        _coerce(text, "epsilon", ini.get("epsilon"), float)
    if preset == "random-band":
        seed = ini.get("seed")
        if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
            raise _err(text, "seed", "initial.seed must be an unsigned 64-bit integer")
        k_max = ini.get("k_max")
        if isinstance(k_max, bool) or not isinstance(k_max, int) or not 1 <= k_max <= kmax_grid:
            raise _err(text, "k_max", f"initial.k_max must be an integer in [1, {kmax_grid}]")
        _coerce(text, "epsilon", ini.get("epsilon"), float)


# initial data ---------------------------------------------------------------------

def single_mode(grid: Grid, xi, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """eta0 = epsilon cos(k . x) for the integer wavevector ``xi``; u0 = 0."""
    X1, X2 = grid.surface_mesh()
    k1 = 2 * np.pi * xi[0] / grid.L1
    k2 = 2 * np.pi * xi[1] / grid.L2
    eta = epsilon * np.cos(k1 * X1 + k2 * X2)
    return np.zeros((3,) + grid.shape), eta


def _band_field(rng: np.random.Generator, grid: Grid, k_max: int) -> np.ndarray:
    c = np.zeros(grid.surface_shape, dtype=complex)
    n1 = grid.n1[:, None]
    n2 = grid.n2[None, :]
    band = (np.abs(n1) <= k_max) & (np.abs(n2) <= k_max) & ((n1 != 0) | (n2 != 0))
    m = int(band.sum())
    c[band] = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    f = grid.to_physical(c, real=False)
    return f.real


def random_band(grid: Grid, seed: int, k_max: int, epsilon: float) -> tuple[np.ndarray, np.ndarray]:
    """Band-limited random surface and a flat-divergence-free velocity with max amplitude epsilon.

    The velocity is the curl of ``(a1, a2, 0)(x3 + b)^2`` with random
    band-limited a1, a2, so it vanishes with its normal derivative at the
    bottom.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    eta = _band_field(rng, grid, k_max)
    a1 = _band_field(rng, grid, k_max)
    a2 = _band_field(rng, grid, k_max)
    eta *= epsilon / np.abs(eta).max()
    z = grid.x3 + grid.b
    u = np.empty((3,) + grid.shape)
    u[0] = -2.0 * a2[..., None] * z
    u[1] = 2.0 * a1[..., None] * z
    u[2] = (diff(a2, grid, 1) - diff(a1, grid, 2))[..., None] * z**2
    u *= epsilon / np.abs(u).max()
    return u, eta


def initial_state(cfg: RunConfig, grid: Grid, params: Params) -> FlowState:
    ini = cfg.initial
    if ini["preset"] == "equilibrium":
        z = FlowState.zeros(grid, depth=cfg.history_depth)
        meta = {"projection_displacement": 0.0, "projection_iterations": 0, "bottom_slip": 0.0}
        return FlowState(z.u, z.p, z.eta, 0.0, depth=cfg.history_depth, meta=meta)
    if ini["preset"] == "single-mode":
        u0, eta0 = single_mode(grid, ini["xi"], float(ini["epsilon"]))
    else:
        u0, eta0 = random_band(grid, int(ini["seed"]), int(ini["k_max"]), float(ini["epsilon"]))
    s = project_initial_data(u0, eta0, params, grid, tol=cfg.projection_tol, j_min=cfg.j_min)
    return FlowState(s.u, s.p, s.eta, s.t, depth=cfg.history_depth, meta=s.meta)


# orchestration -----------------------------------------------------------------

def output_directory(cfg: RunConfig, override: str | Path | None = None) -> Path:
    raw = override if override is not None else cfg.output_dir
    if raw is None:
        raise ConfigError("no output directory given")
    path = Path(raw)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if not path.is_absolute() and root:
        path = Path(root) / path
    return path


def prepare_directory(path: Path, overwrite: bool) -> None:
    if path.exists() and any(path.iterdir()):
        if not overwrite:
            raise ConfigError(f"output directory {path} is not empty (use overwrite)")
        for p in sorted(path.rglob("*"), reverse=True):
            p.unlink() if p.is_file() else p.rmdir()
    path.mkdir(parents=True, exist_ok=True)


@dataclass
class RunResult:
    status: int
    directory: Path | None
    summary: dict = field(default_factory=dict)
    observer: DiagnosticsObserver | None = field(default=None, repr=False)
    trajectory: object = field(default=None, repr=False)


def simulate(cfg: RunConfig, directory: Path | None = None, keep_states: bool = False) -> RunResult:
    """One run: returns the exit status, summary and in-memory diagnostics."""
    grid = cfg.grid()
    params = cfg.params()
    state0 = initial_state(cfg, grid, params)
    csv_path = directory / "diagnostics.csv" if directory is not None else None
    obs = DiagnosticsObserver(params, grid, n=cfg.tier, csv_path=csv_path, g_tier=cfg.g_tier)
    observers = [obs]
    if cfg.checkpoints and directory is not None:
        observers.append(CheckpointWriter(directory / "checkpoints", grid))
    traj = run(state0, cfg.step_config(), params, grid, observers=observers, cadence=cfg.cadence,
               keep_states=keep_states, raise_errors=False)
    summary = _summary(cfg, obs, traj, state0)
    log.info("run finished: %s at t=%.6g", traj.termination["status"], traj.termination["t_final"])
    status = EXIT_OK if traj.termination["status"] == "completed" else EXIT_SOLVER
    if directory is not None:
        (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return RunResult(status, directory, summary, obs, traj)


def _summary(cfg: RunConfig, obs: DiagnosticsObserver, traj, state0: FlowState) -> dict:
    t, E = obs.series("E")
    fits = {}
    for model in ("exponential", "algebraic"):
        try:
            fits[model] = fit_decay(t, E, model=model, t_min=cfg.fit_t_min)
        except ValueError as exc:
            fits[model] = {"error": str(exc)}
    drift = [abs(v - obs.eta_integrals[0]) for v in obs.eta_integrals]
    finite = [r.E for r in obs.reports if np.isfinite(r.E)]
    return {
        "code_version": __version__,
        "config": cfg.to_json(),
        "generator": GENERATOR,
        "seed": cfg.initial.get("seed"),
        "termination": traj.termination,
        "fits": fits,
        "max_E": max(finite) if finite else None,
        "max_eta_mean_drift": max(drift) if drift else 0.0,
        "reports": len(obs.reports),
        "initial": {k: v for k, v in state0.meta.items() if k not in ("step", "t0")},
        "initial_budget_residual": next((r.budget for r in obs.reports if np.isfinite(r.budget)), None),
    }


def run_experiment(cfg: RunConfig, output_dir: str | Path | None = None, overwrite: bool = False) -> RunResult:
    """Run a config of any kind and write its artifacts; returns the exit status and directory."""
    directory = output_directory(cfg, output_dir)
    prepare_directory(directory, overwrite)
    if cfg.kind == "single":
        return simulate(cfg, directory)
    if cfg.kind == "sigma_sweep":
        return sweep_sigma(cfg, cfg.sigmas, directory)
    if cfg.kind == "gamma_sweep":
        return _sweep_param(cfg, "gamma", cfg.gammas, directory)
    return convergence_study(cfg, cfg.dts, directory)


def _check_same_grid(configs) -> None:
    keys = {(c.N1, c.N2, c.N3, c.L1, c.L2, c.b) for c in configs}
    if len(keys) != 1:
        raise ConfigError(f"sweep members use different grids: {sorted(keys)}")


def sweep_sigma(base, sigmas=None, directory: Path | None = None) -> RunResult:
    """Run each sigma with identical data and tabulate the distance to the sigma = 0 run.

    ``base`` is one config (varied in sigma) or a list of configs, one per
    sigma. delta = sup over shared report times of ||u - u0||_0 + ||eta - eta0||_0.
    """
    if isinstance(base, RunConfig):
        if sigmas is None:
            sigmas = base.sigmas
        configs = [replace(base, sigma=float(s), kind="single") for s in sigmas]
    else:
        configs = list(base)
        sigmas = [c.sigma for c in configs]
    if not configs or sigmas[-1] != 0:
        raise ConfigError("sigma list must end with 0")
    _check_same_grid(configs)
    grid = configs[0].grid()
    ref = _states(configs[-1], grid)
    rows = []
    status = EXIT_OK
    if ref[1]["status"] != "completed":
        status = EXIT_SOLVER
    else:
        for cfg in configs:
            states, term = _states(cfg, grid)
            if term["status"] != "completed":
                status = EXIT_SOLVER
                rows.append({"sigma": cfg.sigma, "delta": float("nan"), "status": term["status"]})
                break
            n = min(len(states), len(ref[0]))
            delta = max(l2_norm(a.u - b.u, grid) + l2_norm(a.eta - b.eta, grid)
                        for a, b in zip(states[:n], ref[0][:n]))
            m0 = grid.integrate_surface(states[0].eta)
            drift = max(abs(grid.integrate_surface(s.eta) - m0) for s in states)
            rows.append({"sigma": cfg.sigma, "delta": float(delta), "eta_mean_drift": float(drift),
                         "status": "completed"})
    deltas = [r["delta"] for r in rows]
    monotone = bool(len(deltas) >= 2 and all(a > b for a, b in zip(deltas[:-1], deltas[1:])))
    summary = {"code_version": __version__, "table": rows, "strictly_decreasing": monotone,
               "config": configs[0].to_json()}
    if directory is not None:
        _write_table(directory / "sigma_sweep.csv", rows, ["sigma", "delta", "eta_mean_drift", "status"])
        (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return RunResult(status, directory, summary)


def _states(cfg: RunConfig, grid: Grid):
    params = cfg.params()
    state0 = initial_state(cfg, grid, params)
    traj = run(state0, cfg.step_config(), params, grid, cadence=cfg.cadence, raise_errors=False)
    return traj.states, traj.termination


def _sweep_param(cfg: RunConfig, name: str, values, directory: Path) -> RunResult:
    rows = []
    status = EXIT_OK
    for v in values:
        sub = directory / f"{name}_{v:g}"
        sub.mkdir(parents=True, exist_ok=True)
        res = simulate(replace(cfg, **{name: float(v)}, kind="single"), sub)
        fit = res.summary["fits"].get("exponential", {})
        rows.append({name: v, "rate": fit.get("rate", ""), "r2": fit.get("r2", ""),
                     "status": res.summary["termination"]["status"]})
        if res.status != EXIT_OK:
            status = res.status
            break
    _write_table(directory / f"{name}_sweep.csv", rows, [name, "rate", "r2", "status"])
    summary = {"code_version": __version__, "table": rows, "config": cfg.to_json()}
    (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return RunResult(status, directory, summary)


def convergence_study(cfg: RunConfig, dts, directory: Path | None = None) -> RunResult:
    """Final-time errors against the smallest-dt run, with observed orders."""
    grid = cfg.grid()
    params = cfg.params()
    dts = sorted((float(d) for d in dts), reverse=True)
    finals = []
    for dt in dts:
        state0 = initial_state(cfg, grid, params)
        traj = run(state0, replace(cfg, dt=dt).step_config(), params, grid, keep_states=False,
                   raise_errors=False)
        if traj.termination["status"] != "completed":
            return RunResult(EXIT_SOLVER, directory, {"termination": traj.termination})
        finals.append(traj.final)
    ref = finals[-1]
    rows = []
    for dt, f in zip(dts[:-1], finals[:-1]):
        rows.append({"dt": dt, "error": l2_norm(f.u - ref.u, grid) + l2_norm(f.eta - ref.eta, grid)})
    for a, b in zip(rows[:-1], rows[1:]):
        b["order"] = float(np.log(a["error"] / b["error"]) / np.log(a["dt"] / b["dt"]))
    summary = {"code_version": __version__, "table": rows, "reference_dt": dts[-1], "config": cfg.to_json()}
    if directory is not None:
        _write_table(directory / "convergence.csv", rows, ["dt", "error", "order"])
        (directory / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return RunResult(EXIT_OK, directory, summary)


def _write_table(path: Path, rows, fields) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields, restval="")
        w.writeheader()
        for r in rows:
            w.writerow(r)


def read_series(path: str | Path, column: str = "E") -> tuple[np.ndarray, np.ndarray]:
    """(t, column) pairs from a diagnostics CSV, skipping empty entries."""
    t, v = [], []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "t" not in reader.fieldnames or column not in reader.fieldnames:
            raise ConfigError(f"{path}: missing column 't' or {column!r}")
        for row in reader:
            if row[column] in ("", None):
                continue
            t.append(float(row["t"]))
            v.append(float(row[column]))
    return np.array(t), np.array(v)


def budget_at_start(cfg: RunConfig) -> float:
    """Budget residual after one step, a proxy for the compatibility of the initial data."""
    grid = cfg.grid()
    params = cfg.params()
    s0 = initial_state(cfg, grid, params)
    traj = run(s0, replace(cfg, t_end=cfg.dt).step_config(), params, grid, keep_states=False)
    return budget_residual(traj.final.history, params, grid)

