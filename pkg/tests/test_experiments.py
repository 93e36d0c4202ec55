import json
from pathlib import Path

import numpy as np
import pytest

from nlchns import binio
from nlchns import experiments as ex
from nlchns.cli import main
from nlchns.diagnostics import COLUMNS


def tiny(**changes):
    base = ex.reference_config().replace(**{"grid.nx": 16, "grid.ny": 16, "modes.n_u": 6, "modes.n_phi": 8,
                                            "output.cadence": 0.01}, t_end=0.02)
    return base.replace(**changes) if changes else base


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def test_config_roundtrip_and_hash(tmp_path):
    cfg = ex.reference_config()
    path = tmp_path / "c.json"
    path.write_text(json.dumps(cfg.to_dict()))
    back = ex.SimulationConfig.load(path)
    assert back == cfg and back.digest() == cfg.digest()
    assert cfg.replace(**{"output.dir": "elsewhere"}).digest() == cfg.digest()
    assert cfg.replace(epsilon=0.1).digest() != cfg.digest()


def test_config_rejects_unknown_keys_and_versions():
    d = ex.reference_config().to_dict()
    with pytest.raises(ex.ConfigError, match="unknown"):
        ex.SimulationConfig.from_dict({**d, "colour": 1})
    bad = json.loads(json.dumps(d))
    bad["grid"]["nz"] = 4
    with pytest.raises(ex.ConfigError):
        ex.SimulationConfig.from_dict(bad)
    with pytest.raises(ex.ConfigError, match="schema_version"):
        ex.SimulationConfig.from_dict({**d, "schema_version": 99})


def test_config_validation():
    cfg = ex.reference_config()
    with pytest.raises(ex.ConfigError):
        cfg.replace(**{"initial.amplitude": 0.99})
    with pytest.raises(ex.ConfigError):
        cfg.replace(epsilon=0.0)
    with pytest.raises(ex.ConfigError):
        cfg.replace(**{"density.rho2": 10.0, "density.width": 1.0})
    assert cfg.replace(**{"modes.n_u": 8}).modes.n_u == 8


def test_initial_fields_respect_margin_and_mean():
    cfg = tiny(**{"initial.mean": 0.1, "initial.amplitude": 0.5, "initial.velocity_amplitude": 0.3})
    grid = ex.make_grid(cfg)
    u0, phi0 = ex.initial_fields(cfg, grid)
    assert np.max(np.abs(phi0)) <= 1 - cfg.initial.margin + 1e-12
    assert grid.integrate(phi0) / grid.area == pytest.approx(0.1, abs=1e-12)
    assert np.max(np.abs(u0)) == pytest.approx(0.3)
    assert np.max(np.abs(grid.vdiv(u0))) <= 1e-9


# ---------------------------------------------------------------------------
# single runs
# ---------------------------------------------------------------------------

def test_run_writes_artifacts(tmp_path):
    rec = ex.run(tiny(), tmp_path / "r")
    assert rec.status == "COMPLETED" and rec.exit_code == 0
    out = tmp_path / "r"
    for name in ("config.json", "preflight.json", "summary.json", "diagnostics.csv"):
        assert (out / name).exists(), name
    lines = (out / "diagnostics.csv").read_text().splitlines()
    assert tuple(lines[0].split(",")) == COLUMNS
    assert len(lines) == 1 + 3
    # round-trip exactness of the 17-digit format
    cols = ex.read_csv(rec.csv_path)
    assert ex.summarize(cols, 1.0) == {k: v for k, v in rec.summary.items() if k in ex.summarize(cols, 1.0)}
    meta, arrays = binio.read(rec.snapshot_paths[-1])
    assert meta["config_hash"] == rec.config_hash and arrays["phi"].shape == (16, 16)
    assert json.loads((out / "summary.json").read_text())["status"] == "COMPLETED"


def test_format_row_is_exact():
    vals = [np.pi, 1e-300, -2.5e17, 0.1]
    assert [float(x) for x in ex.format_row(vals)] == vals


def test_trivial_run_has_zero_dissipation(tmp_path):
    cfg = tiny(**{"initial.amplitude": 0.0, "initial.mean": 0.2})
    rec = ex.run(cfg, tmp_path)
    cols = ex.read_csv(rec.csv_path)
    # projection roundoff of the constant seeds velocities of order 1e-25 at most
    for name in ("D_visc", "D_hyper", "D_mix"):
        assert np.max(np.abs(cols[name])) <= 1e-24, name
    assert np.all(cols["art_norm"] == 0.0) and np.all(cols["power"] == 0.0)
    assert rec.summary["mass_drift"] <= 1e-15


def test_determinism_small(tmp_path):
    cfg = tiny(**{"initial.velocity_amplitude": 0.2})
    a = ex.run(cfg, tmp_path / "a")
    b = ex.run(cfg, tmp_path / "b")
    assert open(a.csv_path, "rb").read() == open(b.csv_path, "rb").read()


def test_preflight_failure_status(tmp_path):
    rec = ex.run(tiny(**{"kernel.amplitude": 0.35}), tmp_path)
    assert rec.status == "PREFLIGHT_FAILED" and rec.exit_code == ex.EXIT_PREFLIGHT
    assert (tmp_path / "preflight.json").exists()


def test_file_preset_reload(tmp_path):
    rec = ex.run(tiny(), tmp_path / "first")
    again = ex.run(tiny(**{"initial.preset": "FILE", "initial.path": rec.snapshot_paths[-1]}), tmp_path / "second")
    assert again.status == "COMPLETED"


# ---------------------------------------------------------------------------
# CLI and check suite
# ---------------------------------------------------------------------------

def _write_cfg(tmp_path, cfg, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(cfg.to_dict()))
    return str(path)


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["run", "--config", _write_cfg(tmp_path, tiny()), "--out", str(tmp_path / "ok")]) == 0
    assert json.loads(capsys.readouterr().out)["status"] == "COMPLETED"
    bad = _write_cfg(tmp_path, tiny(**{"kernel.amplitude": 0.35}), "bad.json")
    assert main(["run", "--config", bad, "--out", str(tmp_path / "bad")]) == ex.EXIT_PREFLIGHT
    (tmp_path / "broken.json").write_text("{not json")
    assert main(["run", "--config", str(tmp_path / "broken.json")]) == ex.EXIT_PREFLIGHT
    assert main(["run", "--config", str(tmp_path / "missing.json")]) == ex.EXIT_IO
    underflow = _write_cfg(tmp_path, tiny(**{"integrator.min_step": 0.5, "integrator.max_step": 1.0,
                                             "initial.velocity_amplitude": 1.0}), "under.json")
    assert main(["run", "--config", underflow, "--out", str(tmp_path / "u")]) == ex.EXIT_INTEGRATOR


def test_cli_io_error(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    assert main(["run", "--config", _write_cfg(tmp_path, tiny()), "--out", str(blocker / "sub")]) == ex.EXIT_IO


def test_check_suite_flags_preconditions():
    assert ex.check(tiny(), n_states=20).passed
    swapped = ex.check(tiny(**{"potential.theta": 1.2}), n_states=5)
    assert not swapped.passed and swapped.find("log_temperature_range").passed is False
    weak = ex.check(tiny(**{"kernel.amplitude": 0.35}), n_states=5)
    assert not weak.passed and weak.find("kernel_coercivity").passed is False


def test_basis_command(tmp_path, capsys):
    assert main(["basis", "--config", _write_cfg(tmp_path, tiny())]) == 0
    info = json.loads(capsys.readouterr().out)
    assert info["n_u"] == 6 and info["lambda_min"] > 0


# ---------------------------------------------------------------------------
# continuation studies
# ---------------------------------------------------------------------------

def test_sweeps_single_member_have_no_assertions(tmp_path):
    rep = ex.sweep_epsilon(tiny(), [0.05], tmp_path)
    assert "assertions" not in rep and rep["pairwise_final_l2"] == []
    with pytest.raises(ex.ConfigError):
        ex.sweep_epsilon(tiny(), [0.05, 0.1], tmp_path)


def test_zero_data_delta_sweep(tmp_path):
    cfg = tiny(**{"initial.amplitude": 0.0})
    rep = ex.sweep_delta(cfg, [1e-2, 1e-3], tmp_path)
    for m in rep["members"]:
        assert m["hyper_dissipation_integral"] == 0.0 and m["delta_grad_phi0d_sq"] == 0.0
    assert all(d == 0.0 for d in rep["pairwise_final_l2"])


def test_mode_sweep_reports(tmp_path):
    rep = ex.sweep_modes(tiny(), [4, 6], tmp_path)
    assert not rep["failures"] and set(rep["assertions"]) == {"residual_flat_within_10x",
                                                                "differences_decreasing"}
    assert (tmp_path / "study_modes.json").exists()


def test_shipped_configs_load_and_reference_matches_defaults():
    root = Path(__file__).resolve().parents[1] / "configs"
    cfgs = {p.stem: ex.SimulationConfig.load(p) for p in sorted(root.glob("*.json"))}
    assert cfgs["reference"] == ex.reference_config()
    assert len(cfgs) >= 6
