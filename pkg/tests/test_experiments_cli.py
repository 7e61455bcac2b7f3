import json

import numpy as np
import pytest
from click.testing import CliRunner

from shearfilm.cli import main
from shearfilm.errors import ConfigError
from shearfilm.experiments import (
    EXIT_CHECK,
    EXIT_CONFIG,
    OUTPUT_ROOT_ENV,
    RunConfig,
    load_config,
    output_directory,
    parse_config,
    random_band,
    read_series,
    run_experiment,
    single_mode,
    sweep_sigma,
)
from shearfilm.spectral import make_grid


def doc(**over):
    d = {
        "grid": {"N1": 8, "N2": 8, "N3": 9},
        "physics": {"sigma": 1.0, "gamma": 0.05},
        "step": {"dt": 0.05, "t_end": 0.5},
        "initial": {"preset": "single-mode", "xi": [1, 0], "epsilon": 1e-3},
        "cadence": 1,
        "diagnostics": {"fit_t_min": 0.0},
    }
    d.update(over)
    return d


def write(tmp_path, d, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(d, indent=2))
    return path


class TestParseConfig:
    def test_round_trip(self):
        cfg = parse_config(doc())
        assert isinstance(cfg, RunConfig)
        again = parse_config(cfg.to_json())
        assert again == cfg

    def test_invalid_json_line(self):
        with pytest.raises(ConfigError, match="line 3"):
            parse_config('{\n  "grid": {},\n  oops\n}')

    def test_wrong_type_names_line(self):
        text = json.dumps(doc(grid={"N1": 8, "N2": "eight", "N3": 9}), indent=2)
        line = next(i for i, l in enumerate(text.splitlines(), 1) if '"N2"' in l)
        with pytest.raises(ConfigError, match=f"line {line}: N2 must be an integer"):
            parse_config(text)

    def test_unknown_key(self):
        with pytest.raises(ConfigError, match="unknown key physics.nu"):
            parse_config(doc(physics={"sigma": 1.0, "gamma": 0.0, "nu": 1.0}))

    def test_missing_required(self):
        with pytest.raises(ConfigError, match="step.dt"):
            parse_config(doc(step={"t_end": 1.0}))

    @pytest.mark.parametrize("initial, msg", [
        ({"preset": "vortex"}, "preset"),
        ({"preset": "single-mode", "xi": [0, 0], "epsilon": 1e-3}, "non-zero"),
        ({"preset": "single-mode", "xi": [5, 0], "epsilon": 1e-3}, "dealiased band"),
        ({"preset": "random-band", "seed": -1, "k_max": 1, "epsilon": 1e-3}, "seed"),
        ({"preset": "random-band", "seed": 3, "k_max": 9, "epsilon": 1e-3}, "k_max"),
    ])
    def test_initial_presets(self, initial, msg):
        with pytest.raises(ConfigError, match=msg):
            parse_config(doc(initial=initial))

    def test_physics_validation(self):
        with pytest.raises(ConfigError, match="sigma"):
            parse_config(doc(physics={"sigma": -1.0, "gamma": 0.0}))

    def test_load_missing_file(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(tmp_path / "none.json")


class TestInitialData:
    def test_single_mode(self, grid8):
        u, eta = single_mode(grid8, (1, 2), 0.01)
        assert not u.any()
        assert np.abs(eta).max() == pytest.approx(0.01)

    def test_random_band_reproducible(self, grid16):
        a = random_band(grid16, 2**63 + 5, 3, 1e-3)
        b = random_band(grid16, 2**63 + 5, 3, 1e-3)
        c = random_band(grid16, 7, 3, 1e-3)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])
        assert not np.array_equal(a[1], c[1])

    def test_random_band_compatible(self, grid16):
        u, eta = random_band(grid16, 1, 3, 1e-3)
        assert np.abs(u[..., 0]).max() == 0.0
        assert abs(eta.mean()) < 1e-18
        assert np.abs(u).max() == pytest.approx(1e-3)


class TestOutputDirectory:
    def test_env_root(self, monkeypatch, tmp_path):
        monkeypatch.setenv(OUTPUT_ROOT_ENV, str(tmp_path))
        cfg = parse_config(doc(output_dir="runs/a"))
        assert output_directory(cfg) == tmp_path / "runs" / "a"

    def test_missing(self):
        with pytest.raises(ConfigError):
            output_directory(parse_config(doc()))

    def test_refuses_non_empty(self, tmp_path):
        (tmp_path / "old.txt").write_text("x")
        with pytest.raises(ConfigError, match="not empty"):
            run_experiment(parse_config(doc()), tmp_path)


class TestRunExperiment:
    def test_equilibrium(self, tmp_path):
        cfg = parse_config(doc(initial={"preset": "equilibrium"}, step={"dt": 0.05, "t_end": 1.0}))
        res = run_experiment(cfg, tmp_path / "eq")
        assert res.status == 0
        s = json.loads((tmp_path / "eq" / "summary.json").read_text())
        assert s["max_E"] <= 1e-16
        assert s["termination"]["status"] == "completed"
        assert s["generator"] == "numpy.random.Philox"

    def test_seed_reproducible_csv(self, tmp_path):
        d = doc(initial={"preset": "random-band", "seed": 12345, "k_max": 2, "epsilon": 1e-3},
                step={"dt": 0.05, "t_end": 0.3})
        run_experiment(parse_config(d), tmp_path / "a")
        run_experiment(parse_config(d), tmp_path / "b")
        assert (tmp_path / "a" / "diagnostics.csv").read_bytes() == (tmp_path / "b" / "diagnostics.csv").read_bytes()

    def test_checkpoints(self, tmp_path):
        d = doc(diagnostics={"checkpoints": True}, step={"dt": 0.1, "t_end": 0.2})
        run_experiment(parse_config(d), tmp_path / "c")
        manifest = json.loads((tmp_path / "c" / "checkpoints" / "manifest.json").read_text())
        assert [e["step"] for e in manifest["snapshots"]] == [0, 1, 2]

    def test_read_series(self, tmp_path):
        run_experiment(parse_config(doc()), tmp_path / "r")
        t, E = read_series(tmp_path / "r" / "diagnostics.csv", "E")
        assert len(t) == len(E) > 0 and np.all(E > 0)
        with pytest.raises(ConfigError):
            read_series(tmp_path / "r" / "diagnostics.csv", "nope")


class TestSweep:
    def test_reference_only(self):
        res = sweep_sigma(parse_config(doc(step={"dt": 0.05, "t_end": 0.2})), [0.0])
        assert [r["delta"] for r in res.summary["table"]] == [0.0]

    def test_mismatched_grids(self):
        a = parse_config(doc())
        b = parse_config(doc(grid={"N1": 16, "N2": 8, "N3": 9}, physics={"sigma": 0.0, "gamma": 0.05}))
        with pytest.raises(ConfigError, match="different grids"):
            sweep_sigma([a, b])

    def test_must_end_with_zero(self):
        with pytest.raises(ConfigError, match="end with 0"):
            sweep_sigma(parse_config(doc()), [1.0, 0.1])

    def test_convergence_kind(self, tmp_path):
        d = doc(kind="convergence", dts=[0.1, 0.05, 0.025, 0.003125], step={"dt": 0.1, "t_end": 0.4})
        res = run_experiment(parse_config(d), tmp_path / "cv")
        orders = [r["order"] for r in res.summary["table"] if "order" in r]
        assert orders and all(0.8 < o < 1.3 for o in orders)


class TestCli:
    def test_simulate(self, tmp_path):
        cfg = write(tmp_path, doc(step={"dt": 0.1, "t_end": 0.3}))
        r = CliRunner().invoke(main, ["simulate", str(cfg), "-o", str(tmp_path / "out")])
        assert r.exit_code == 0, r.output
        assert (tmp_path / "out" / "diagnostics.csv").exists()
        r = CliRunner().invoke(main, ["simulate", str(cfg), "-o", str(tmp_path / "out")])
        assert r.exit_code == EXIT_CONFIG
        r = CliRunner().invoke(main, ["simulate", str(cfg), "-o", str(tmp_path / "out"), "--overwrite"])
        assert r.exit_code == 0

    def test_malformed_config_leaves_nothing(self, tmp_path):
        cfg = tmp_path / "bad.json"
        cfg.write_text('{"grid": {"N1": 8,}')
        r = CliRunner().invoke(main, ["simulate", str(cfg), "-o", str(tmp_path / "never")])
        assert r.exit_code == EXIT_CONFIG
        assert "line 1" in r.output
        assert not (tmp_path / "never").exists()

    def test_sweep_sigma(self, tmp_path):
        cfg = write(tmp_path, doc(step={"dt": 0.1, "t_end": 0.3}))
        r = CliRunner().invoke(main, ["sweep-sigma", str(cfg), "--sigmas", "1,0.1,0", "-o", str(tmp_path / "sw")])
        assert r.exit_code == 0, r.output
        assert "strictly decreasing" in r.output
        assert (tmp_path / "sw" / "sigma_sweep.csv").exists()
        r = CliRunner().invoke(main, ["sweep-sigma", str(cfg), "--sigmas", "1,0.1", "-o", str(tmp_path / "sw2")])
        assert r.exit_code == EXIT_CONFIG

    def test_fit(self, tmp_path):
        path = tmp_path / "d.csv"
        t = np.linspace(0, 4, 21)
        path.write_text("t,E\n" + "".join(f"{float(a)!r},{float(np.exp(-3 * a))!r}\n" for a in t))
        r = CliRunner().invoke(main, ["fit", str(path), "--model", "exp"])
        assert r.exit_code == 0
        assert json.loads(r.output)["rate"] == pytest.approx(3.0, abs=1e-9)
        path.write_text("t,E\n0,1\n1,1\n")
        r = CliRunner().invoke(main, ["fit", str(path)])
        assert r.exit_code == EXIT_CHECK

    def test_verify(self):
        r = CliRunner().invoke(main, ["verify"])
        assert r.exit_code == 0, r.output
        assert "FAIL" not in r.output and r.output.count("PASS") >= 9

    def test_version(self):
        r = CliRunner().invoke(main, ["--version"])
        assert r.exit_code == 0 and "0.1.0" in r.output
