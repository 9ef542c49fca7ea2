import json
import os

import pytest

from cbolab.cli import main
from cbolab.config import ConfigError, default_config, resolve_config


def _write_cfg(tmp_path, payload, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(payload))
    return str(path)


OPTIMIZE_CFG = {
    "experiment": "optimize",
    "seed": 7,
    "objective": {"name": "quadratic", "dim": 2},
    "cbo": {"lambda": 1.0, "sigma": 0.0, "alpha": 20.0, "dt": 0.1,
            "n_particles": 1000, "horizon": 6.0,
            "init_center": [0.0, 0.0], "init_spread": 0.02},
    "check": {"final_w2_max": 1e-6},
}


def test_optimize_deterministic_contraction(tmp_path):
    cfg = _write_cfg(tmp_path, OPTIMIZE_CFG)
    out = str(tmp_path / "run")
    assert main(["run", "--config", cfg, "--output", out, "--check"]) == 0
    assert os.path.exists(os.path.join(out, "trajectory.csv"))
    assert os.path.exists(os.path.join(out, "manifest.json"))
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "PASS" in summary


def test_trajectory_schema(tmp_path):
    cfg = _write_cfg(tmp_path, OPTIMIZE_CFG)
    out = str(tmp_path / "run")
    main(["run", "--config", cfg, "--output", out])
    header = open(os.path.join(out, "trajectory.csv")).readline().strip()
    assert header == ("step,time,valpha_1,valpha_2,w2_sq_to_vstar,variance,"
                      "ess,log_normalizer")


def test_manifest_replay_is_byte_identical(tmp_path):
    cfg = _write_cfg(tmp_path, OPTIMIZE_CFG)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    main(["run", "--config", cfg, "--output", out1])
    manifest = os.path.join(out1, "manifest.json")
    assert main(["run", "--config", manifest, "--output", out2]) == 0
    a = open(os.path.join(out1, "trajectory.csv"), "rb").read()
    b = open(os.path.join(out2, "trajectory.csv"), "rb").read()
    assert a == b


def test_unknown_key_rejected(tmp_path):
    cfg = _write_cfg(tmp_path, {**OPTIMIZE_CFG, "cbo": {"sigmaa": 1.0}})
    assert main(["run", "--config", cfg, "--output", str(tmp_path / "x")]) == 1
    cfg2 = _write_cfg(tmp_path, {**OPTIMIZE_CFG, "experiment": "nope"}, "c2.json")
    assert main(["run", "--config", cfg2, "--output", str(tmp_path / "y")]) == 1


def test_override_rejects_unknown_and_applies_known(tmp_path):
    cfg = _write_cfg(tmp_path, OPTIMIZE_CFG)
    out = str(tmp_path / "run")
    assert main(["run", "--config", cfg, "--output", out,
                 "--set", "cbx.sigma=0.1"]) == 1
    assert main(["run", "--config", cfg, "--output", out,
                 "--set", "cbo.horizon=1.0"]) == 0
    manifest = json.load(open(os.path.join(out, "manifest.json")))
    assert manifest["config"]["cbo"]["horizon"] == 1.0


def test_rerun_is_byte_identical(tmp_path):
    cfg = _write_cfg(tmp_path, OPTIMIZE_CFG)
    out1, out2 = str(tmp_path / "a"), str(tmp_path / "b")
    main(["run", "--config", cfg, "--output", out1])
    main(["run", "--config", cfg, "--output", out2])
    a = open(os.path.join(out1, "trajectory.csv"), "rb").read()
    b = open(os.path.join(out2, "trajectory.csv"), "rb").read()
    assert a == b


def test_check_mode_failure_exit_code(tmp_path):
    payload = dict(OPTIMIZE_CFG)
    payload["check"] = {"final_w2_max": 1e-30}
    cfg = _write_cfg(tmp_path, payload)
    assert main(["run", "--config", cfg, "--output", str(tmp_path / "r"),
                 "--check"]) == 2


def test_plot_data_outputs(tmp_path):
    cfg = _write_cfg(tmp_path, OPTIMIZE_CFG)
    out = str(tmp_path / "run")
    main(["run", "--config", cfg, "--output", out])
    assert main(["plot-data", out]) == 0
    dat = open(os.path.join(out, "decay.dat")).read().splitlines()
    assert dat[0].startswith("#")
    assert len(dat) > 10
    assert os.path.exists(os.path.join(out, "decay.gp"))


def test_plot_data_empty_dir_fails(tmp_path):
    assert main(["plot-data", str(tmp_path)]) == 1


def test_assumptions_check_quartic(tmp_path):
    payload = {
        "experiment": "assumptions-check",
        "seed": 1,
        "cutoff": {"field": "quartic", "valpha_const": [0.0, 0.0],
                   "samples": 2000, "box": 3.0},
        "check": {"all_satisfied": True},
    }
    cfg = _write_cfg(tmp_path, payload)
    out = str(tmp_path / "run")
    assert main(["run", "--config", cfg, "--output", out, "--check"]) == 0
    rows = open(os.path.join(out, "inequalities.csv")).read().splitlines()
    assert rows[0] == "quantity,sup,sample_count,satisfied"
    assert len(rows) == 5


def test_lemma_check_end_to_end(tmp_path):
    payload = {
        "experiment": "lemma-check",
        "seed": 2,
        "cutoff": {"R": 5.0, "n": 50.0, "samples": 2000,
                   "valpha_const": [0.3, -0.2]},
        "check": {"stability_max": 0.05},
    }
    cfg = _write_cfg(tmp_path, payload)
    assert main(["run", "--config", cfg, "--output", str(tmp_path / "run"),
                 "--check"]) == 0


def test_mfl_scaling_small(tmp_path):
    payload = {
        "experiment": "mfl-scaling",
        "seed": 11,
        "objective": {"name": "quadratic", "dim": 2},
        "coupling": {"sizes": [8, 32, 128], "reference_size": 512,
                     "horizon": 0.5, "dt": 0.05, "lambda": 1.0,
                     "sigma": 0.5, "alpha": 5.0, "init_center": [1.0, 1.0]},
    }
    cfg = _write_cfg(tmp_path, payload)
    out = str(tmp_path / "run")
    assert main(["run", "--config", cfg, "--output", out]) == 0
    rows = open(os.path.join(out, "scaling.csv")).read().splitlines()
    assert rows[0] == "n,sup_mse" and len(rows) == 4
    assert main(["plot-data", out]) == 0


def test_success_prob_cli(tmp_path):
    payload = {
        "experiment": "success-prob",
        "seed": 5,
        "objective": {"name": "quadratic", "dim": 2},
        "cbo": {"lambda": 1.0, "sigma": 0.0, "alpha": 10.0, "dt": 0.1,
                "n_particles": 60, "horizon": 4.0,
                "init_center": [0.0, 0.0], "init_spread": 0.3},
        "success": {"runs": 4, "epsilon": 0.2},
        "check": {"fraction_min": 1.0},
    }
    cfg = _write_cfg(tmp_path, payload)
    out = str(tmp_path / "run")
    assert main(["run", "--config", cfg, "--output", out, "--check"]) == 0
    rows = open(os.path.join(out, "success.csv")).read().splitlines()
    assert rows[0] == "run,seed,final_error,hit,diverged"
    assert len(rows) == 5


def test_pde_run_small(tmp_path):
    payload = {
        "experiment": "pde-run",
        "seed": 0,
        "objective": {"name": "quadratic", "dim": 2},
        "cbo": {"alpha": 10.0},
        "pde": {"dim": 2, "L": 6.0, "K": 16, "M": 64, "dt": 5e-3,
                "horizon": 0.05, "form": "cbo",
                "valpha_mode": "self_consistent", "integrator": "rkc",
                "assembly": "divergence", "init_center": [1.0, 1.0],
                "init_radius": 0.8, "record_every": 2,
                "snapshot_times": [0.05]},
        "cutoff": {"R": 20.0, "n": 500.0},
        "check": {"mass_drift_max": 1e-9},
    }
    cfg = _write_cfg(tmp_path, payload)
    out = str(tmp_path / "run")
    assert main(["run", "--config", cfg, "--output", out, "--check"]) == 0
    series = open(os.path.join(out, "series.csv")).read().splitlines()
    assert series[0].startswith("time,mass,valpha_1,valpha_2")
    assert os.path.exists(os.path.join(out, "grid_0000.csv"))
    assert os.path.exists(os.path.join(out, "snapshot_coeffs_0000.csv"))


def test_confinement_cli_check_fails_honestly(tmp_path):
    # tiny resolution: the probe cannot stay below an impossible threshold,
    # and check mode must say so with exit code 2
    payload = {
        "experiment": "confinement-1d",
        "seed": 0,
        "pde": {"dim": 1, "L": 12.0, "K": 64, "M": 256, "dt": 5e-3,
                "horizon": 0.2, "form": "cbo", "valpha_mode": "frozen",
                "valpha_const": [0.0], "integrator": "rkc",
                "assembly": "divergence", "init_center": [-2.25],
                "init_radius": 1.75, "record_every": 5, "v_star": 0.0},
        "cutoff": {"R": 4.0, "n": 4.5},
        "check": {"confinement_max": 1e-30},
    }
    cfg = _write_cfg(tmp_path, payload)
    assert main(["run", "--config", cfg, "--output", str(tmp_path / "run"),
                 "--check"]) == 2


def test_positivity_cli(tmp_path):
    # toy resolution: the probe reports the solver's ringing floor, so the
    # configured floor is the toy-scale one; the full-scale criterion lives
    # in the acceptance suite
    payload = {
        "experiment": "positivity",
        "seed": 0,
        "objective": {"name": "quadratic", "dim": 2},
        "cbo": {"alpha": 10.0},
        "pde": {"dim": 2, "L": 6.0, "K": 16, "M": 64, "dt": 5e-3,
                "horizon": 0.1, "form": "cbo",
                "valpha_mode": "self_consistent", "integrator": "rkc",
                "assembly": "divergence", "init_center": [1.0, 1.0],
                "init_radius": 0.8, "record_every": 2,
                "annulus_inner": 0.2, "annulus_outer": 2.5},
        "cutoff": {"R": 20.0, "n": 500.0},
        "check": {"positivity_floor": -0.5},
    }
    cfg = _write_cfg(tmp_path, payload)
    out = str(tmp_path / "run")
    code = main(["run", "--config", cfg, "--output", out, "--check"])
    summary = open(os.path.join(out, "summary.txt")).read()
    assert "min density on annulus" in summary
    assert os.path.exists(os.path.join(out, "probe.csv"))
    assert code == 0


def test_config_defaults_and_strictness():
    cfg = resolve_config({"experiment": "optimize"})
    assert cfg["cbo"]["lambda"] == 1.0
    with pytest.raises(ConfigError):
        resolve_config({"experiment": "optimize", "bogus": {}})
    with pytest.raises(ConfigError):
        resolve_config({})
    base = default_config()
    assert "experiment" not in base  # required, no default
