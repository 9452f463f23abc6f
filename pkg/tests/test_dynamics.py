"""Descent updates, initialization schemes, and trajectory recording."""
from __future__ import annotations

import math

import numpy as np
import pytest

from prlandscape.dynamics import (
    TrajectoryConfig,
    default_steps,
    gd_step,
    init_constrained,
    init_random,
    init_spectral,
    magnetization,
    run_trajectory,
    save_record,
)
from prlandscape.model import LossSpec, generate_instance, gradient, total_loss

SPEC = LossSpec(a=0.01)


# ===== step counts and config validation =====

def test_default_steps_values():
    assert default_steps(1024) == 120000
    assert default_steps(512) == 108000
    assert default_steps(300) == round(12000 * math.log2(300))


def test_config_validation():
    with pytest.raises(ValueError):
        TrajectoryConfig(eta=0.0)
    with pytest.raises(ValueError):
        TrajectoryConfig(steps=0)
    with pytest.raises(ValueError):
        TrajectoryConfig(record_every=0)
    with pytest.raises(ValueError):
        TrajectoryConfig(init="warm")
    with pytest.raises(ValueError):
        TrajectoryConfig(t_c=0)


# ===== single update =====

def test_gd_step_matches_update_rule():
    inst = generate_instance(24, 2.0, seed=1)
    w = init_random(24, seed=2)
    g = gradient(SPEC, inst, w)
    mu = float(w @ g) / inst.N
    expected = w - 2e-4 * g + 2e-4 * mu * w
    out = gd_step(SPEC, inst, w, eta=2e-4, renormalize=False)
    np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_gd_step_stays_on_sphere():
    inst = generate_instance(24, 2.0, seed=1)
    w = init_random(24, seed=2)
    for _ in range(50):
        w = gd_step(SPEC, inst, w, eta=2e-4)
        assert np.linalg.norm(w) == pytest.approx(np.sqrt(24), rel=1e-12)


def test_gd_step_decreases_loss_at_small_eta():
    inst = generate_instance(32, 3.0, seed=4)
    w = init_random(32, seed=5)
    before = total_loss(SPEC, inst, w)
    after = total_loss(SPEC, inst, gd_step(SPEC, inst, w, eta=1e-5))
    assert after < before


def test_gd_step_rejects_off_sphere_state():
    inst = generate_instance(16, 2.0, seed=0)
    with pytest.raises(ValueError):
        gd_step(SPEC, inst, 0.5 * init_random(16, seed=0))


# ===== initialization schemes =====

def test_init_random_norm_and_determinism():
    w = init_random(64, seed=9)
    assert np.linalg.norm(w) == pytest.approx(np.sqrt(64), rel=1e-12)
    np.testing.assert_array_equal(w, init_random(64, seed=9))
    assert not np.array_equal(w, init_random(64, seed=10))


def test_init_spectral_is_bottom_direction():
    from prlandscape.spectrum import hessian_dense

    inst = generate_instance(40, 3.0, seed=6)
    w = init_spectral(SPEC, inst, seed=7)
    assert np.linalg.norm(w) == pytest.approx(np.sqrt(40), rel=1e-12)
    w_ref = init_random(40, seed=7)
    H = hessian_dense(SPEC, inst, w_ref)
    evals = np.linalg.eigvalsh(H)
    v = w / np.linalg.norm(w)
    assert float(v @ H @ v) == pytest.approx(evals[0], abs=1e-8)
    assert float(v @ w_ref) >= 0.0


def test_init_constrained_lands_on_zero_magnetization_plateau():
    inst = generate_instance(48, 4.0, seed=8)
    w = init_constrained(SPEC, inst, t_c=500, seed=3)
    assert np.linalg.norm(w) == pytest.approx(np.sqrt(48), rel=1e-12)
    assert abs(magnetization(inst, w)) < 1e-12
    # the plateau keeps finite loss: descent happened but recovery is blocked
    assert 0 < total_loss(SPEC, inst, w) / inst.N < total_loss(
        SPEC, inst, init_random(48, seed=3)) / inst.N


def test_magnetization_shape_check():
    inst = generate_instance(12, 2.0, seed=0)
    assert magnetization(inst, inst.signal) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        magnetization(inst, np.zeros(11))


# ===== trajectory engine =====

def test_trajectory_matches_repeated_gd_steps():
    inst = generate_instance(20, 2.5, seed=11)
    w0 = init_random(20, seed=12)
    config = TrajectoryConfig(eta=2e-4, steps=25, record_every=5)
    rec = run_trajectory(SPEC, inst, config, w0=w0)
    w = w0.copy()
    for _ in range(25):
        w = gd_step(SPEC, inst, w, eta=2e-4)
    np.testing.assert_allclose(rec.final_state, w, atol=1e-10)


def test_trajectory_recording_grid():
    inst = generate_instance(16, 2.0, seed=1)
    config = TrajectoryConfig(steps=1500, record_every=100,
                              snapshot_times=(0, 700))
    rec = run_trajectory(SPEC, inst, config, seed=0)
    assert rec.times[0] == 0
    assert rec.times[-1] == 1500
    # dense early recording, then the coarse grid
    assert list(rec.times[:6]) == [0, 1, 2, 3, 4, 5]
    assert 1100 in rec.times and 1050 not in rec.times
    assert [t for t, _ in rec.snapshots] == [0, 700]
    for _, snap in rec.snapshots:
        assert np.linalg.norm(snap) == pytest.approx(np.sqrt(16), rel=1e-6)
    assert rec.config["seed"] == 0
    assert rec.config["N"] == 16
    assert len(rec.times) == len(rec.magnetization) == len(rec.loss)


def test_trajectory_recovers_easy_instance():
    spec = LossSpec(a=1.0)
    inst = generate_instance(48, 8.0, seed=21)
    config = TrajectoryConfig(init="spectral", steps=30000,
                              early_exit_loss=1e-12)
    rec = run_trajectory(spec, inst, config, seed=2)
    assert rec.valid
    assert rec.recovered
    assert abs(rec.final_magnetization) >= 0.99
    assert rec.times[-1] < 30000          # early exit fired


def test_trajectory_float32_returns_float64_state():
    inst = generate_instance(32, 3.0, seed=2)
    config = TrajectoryConfig(steps=200, dtype="float32")
    rec = run_trajectory(SPEC, inst, config, seed=1)
    assert rec.final_state.dtype == np.float64
    assert np.linalg.norm(rec.final_state) == pytest.approx(np.sqrt(32), rel=1e-5)


@pytest.mark.filterwarnings("ignore:overflow encountered")
def test_trajectory_overflow_flags_invalid():
    inst = generate_instance(32, 3.0, seed=3)
    config = TrajectoryConfig(eta=1.0, steps=5000, renormalize=False)
    rec = run_trajectory(SPEC, inst, config, seed=4)
    assert not rec.valid
    assert not rec.recovered


def test_save_record_round_trip(tmp_path):
    inst = generate_instance(16, 2.0, seed=5)
    rec = run_trajectory(SPEC, inst, TrajectoryConfig(steps=50), seed=6)
    path = tmp_path / "rec.npz"
    save_record(rec, path)
    with np.load(path) as data:
        np.testing.assert_array_equal(data["times"], rec.times)
        np.testing.assert_allclose(data["magnetization"], rec.magnetization)
        np.testing.assert_allclose(data["final_state"], rec.final_state)
        assert bool(data["recovered"]) == rec.recovered
