"""End-to-end command-line interface behavior: outputs, config, exit codes."""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import pytest

from prlandscape import replica
from prlandscape.cli import (
    EXIT_COMPUTATION,
    EXIT_CONFIG_MALFORMED,
    EXIT_CONFIG_NOT_FOUND,
    EXIT_MISSING_INPUT,
    EXIT_OK,
    main,
)


def test_bbp_prints_value_and_writes_json(tmp_path, capsys):
    out = tmp_path / "bbp"
    rc = main(["bbp", "--a", "1", "--density", "analytic-init",
               "--out", str(out)])
    assert rc == EXIT_OK
    stdout = capsys.readouterr().out
    assert "alpha_bbp = 1.135" in stdout
    payload = json.loads((out / "bbp.json").read_text())
    assert payload["alpha_bbp"] == pytest.approx(1.13502, abs=2e-3)
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["kind"] == "cli_bbp"
    assert manifest["config_hash"]


def test_config_file_missing_exits_3(tmp_path, capsys):
    rc = main(["bbp", "--config", str(tmp_path / "nope.toml")])
    assert rc == EXIT_CONFIG_NOT_FOUND
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "config-not-found"


def test_config_file_malformed_exits_4(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("this is [[[ not toml")
    rc = main(["bbp", "--config", str(bad)])
    assert rc == EXIT_CONFIG_MALFORMED
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "config-malformed"


def test_config_merge_and_flag_override(tmp_path, capsys):
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('[bbp]\na = 0.1\ndensity = "analytic-init"\n')
    out1 = tmp_path / "from_config"
    assert main(["bbp", "--config", str(cfg), "--out", str(out1)]) == EXIT_OK
    assert json.loads((out1 / "bbp.json").read_text())["a"] == 0.1
    # explicit flag beats the config value
    out2 = tmp_path / "overridden"
    assert main(["bbp", "--config", str(cfg), "--a", "1.0",
                 "--out", str(out2)]) == EXIT_OK
    payload = json.loads((out2 / "bbp.json").read_text())
    assert payload["a"] == 1.0
    assert payload["alpha_bbp"] == pytest.approx(1.13502, abs=2e-3)
    capsys.readouterr()


def test_unknown_command_is_usage_error(capsys):
    with pytest.raises(SystemExit) as excinfo:
        main(["frobnicate"])
    assert excinfo.value.code == 2
    capsys.readouterr()


def test_simulate_then_spectrum_chain(tmp_path, capsys):
    run = tmp_path / "run"
    rc = main(["simulate", "--a", "1.0", "--alpha", "6.0", "--N", "48",
               "--seed", "0", "--init", "random", "--steps", "500",
               "--out", str(run)])
    assert rc == EXIT_OK
    assert (run / "trajectory.csv").exists()
    assert (run / "final_state.npz").exists()
    summary = json.loads((run / "summary.json").read_text())
    assert "recovered" in summary and "instance_seed" in summary
    with np.load(run / "final_state.npz") as data:
        assert data["w"].shape == (48,)

    rc = main(["spectrum", "--run", str(run)])
    assert rc == EXIT_OK
    payload = json.loads((run / "spectrum.json").read_text())
    assert payload["lambda_min"] <= payload["lambda_max"]
    rows = (run / "spectrum.csv").read_text().splitlines()
    assert rows[0] == "lambda" and len(rows) == 49
    capsys.readouterr()


def test_spectrum_missing_run_exits_5(tmp_path, capsys):
    rc = main(["spectrum", "--run", str(tmp_path / "missing")])
    assert rc == EXIT_MISSING_INPUT
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "missing-input"
    assert main(["spectrum"]) == EXIT_MISSING_INPUT
    capsys.readouterr()


def test_rmt_density_outputs(tmp_path, capsys):
    out = tmp_path / "density"
    rc = main(["rmt-density", "--a", "1", "--alpha", "10", "--points", "40",
               "--out", str(out)])
    assert rc == EXIT_OK
    edges = json.loads((out / "edges.json").read_text())
    assert edges["left_edge"] == pytest.approx(9.7576, abs=1e-3)
    assert edges["outlier_exists"] is True
    assert edges["outlier_lambda"] == pytest.approx(4.8947, abs=1e-3)
    assert len((out / "density.csv").read_text().splitlines()) == 41
    capsys.readouterr()


def test_sweep_and_report_round_trip(tmp_path, capsys):
    out = tmp_path / "sweep"
    rc = main(["sweep", "--a", "1.0", "--N-list", "32",
               "--alpha-grid", "5.0,7.0", "--seeds", "2",
               "--steps-rule", "fixed:400", "--out", str(out)])
    assert rc == EXIT_OK
    first = (out / "recovery.csv").read_text()
    assert len(first.splitlines()) == 3

    rc = main(["report", "--run", str(out)])
    assert rc == EXIT_OK
    assert (out / "recovery.svg").exists()
    assert (out / "recovery.csv").read_text() == first
    # idempotent: a second report pass reproduces the same table
    rc = main(["report", "--run", str(out)])
    assert rc == EXIT_OK
    assert (out / "recovery.csv").read_text() == first
    capsys.readouterr()


def test_report_rejects_non_sweep_directory(tmp_path, capsys):
    run = tmp_path / "notasweep"
    run.mkdir()
    (run / "manifest.json").write_text(json.dumps({"kind": "other"}))
    assert main(["report", "--run", str(run)]) == EXIT_MISSING_INPUT
    assert main(["report", "--run", str(tmp_path / "void")]) == EXIT_MISSING_INPUT
    capsys.readouterr()


def test_threshold_sample_then_phase_diagram_needs_pairs(tmp_path, capsys):
    pool = tmp_path / "pool"
    rc = main(["threshold-sample", "--a", "1.0", "--alpha", "4.0", "--N", "32",
               "--seeds", "1", "--times", "plateau", "--t-c", "50",
               "--out", str(pool)])
    assert rc == EXIT_OK
    assert (pool / "pool_plateau.npz").exists()
    # 128 pairs is far below the advertised precision floor
    rc = main(["phase-diagram", "--pool-dir", str(pool)])
    assert rc == EXIT_MISSING_INPUT
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "insufficient-input"


def test_phase_diagram_requires_pool_dir(tmp_path, capsys):
    assert main(["phase-diagram"]) == EXIT_MISSING_INPUT
    assert main(["phase-diagram", "--pool-dir", str(tmp_path / "none")]) \
        == EXIT_MISSING_INPUT
    capsys.readouterr()


def test_bbp_pool_density_source(tmp_path, capsys):
    rng = np.random.default_rng(1)
    pool = tmp_path / "pairs.npz"
    np.savez_compressed(pool, pairs=rng.standard_normal((20_000, 2)))
    out = tmp_path / "bbp_pool"
    rc = main(["bbp", "--a", "1.0", "--density", "pool", "--pool", str(pool),
               "--out", str(out)])
    assert rc == EXIT_OK
    payload = json.loads((out / "bbp.json").read_text())
    assert payload["alpha_bbp"] == pytest.approx(1.135, abs=0.08)
    # pool source without a pool file is missing input
    assert main(["bbp", "--a", "1.0", "--density", "pool"]) \
        == EXIT_MISSING_INPUT
    capsys.readouterr()


def test_replica_solve_failure_exits_6(tmp_path, monkeypatch, capsys):
    def boom(spec, alpha0=4.3, tol=1e-3):
        raise replica.ConvergenceError("no bracket")

    monkeypatch.setattr("prlandscape.cli.replica.threshold_bbp_alpha", boom)
    rc = main(["replica-solve", "--a", "0.01", "--out", str(tmp_path / "rs")])
    assert rc == EXIT_COMPUTATION
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] == "computation-failed"
