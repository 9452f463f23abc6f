"""Hessian assembly, matrix-free products, eigensolvers, outlier detection."""
from __future__ import annotations

import numpy as np
import pytest

from prlandscape.dynamics import init_random
from prlandscape.model import LossSpec, generate_instance, gradient
from prlandscape.spectrum import (
    detect_outlier,
    empirical_density,
    extreme_eigenpair,
    full_spectrum,
    hessian_dense,
    hessian_times_vector,
    mu_shift,
    sample_weights,
)

SPEC = LossSpec(a=0.01)


def _state(inst, seed):
    return init_random(inst.N, seed)


# ===== the spherical multiplier =====

def test_mu_shift_equals_projected_gradient():
    inst = generate_instance(32, 3.0, seed=1)
    w = _state(inst, 2)
    mu = mu_shift(SPEC, inst, w)
    assert mu == pytest.approx(float(w @ gradient(SPEC, inst, w)) / inst.N,
                               rel=1e-12)


def test_mu_shift_vanishes_at_signal():
    inst = generate_instance(32, 3.0, seed=1)
    assert mu_shift(SPEC, inst, inst.signal) == pytest.approx(0.0, abs=1e-14)


# ===== Hessian assembly =====

def test_hessian_dense_matches_direct_sum():
    inst = generate_instance(8, 2.0, seed=3)
    w = _state(inst, 4)
    f = sample_weights(SPEC, inst, w)
    H_direct = np.zeros((8, 8))
    for i in range(inst.M):
        x = inst.sensing[i]
        H_direct += f[i] * np.outer(x, x)
    H_direct -= mu_shift(SPEC, inst, w) * np.eye(8)
    np.testing.assert_allclose(hessian_dense(SPEC, inst, w), H_direct,
                               atol=1e-12)


def test_hessian_dense_symmetric_and_shift_toggle():
    inst = generate_instance(24, 3.0, seed=5)
    w = _state(inst, 6)
    H = hessian_dense(SPEC, inst, w)
    np.testing.assert_array_equal(H, H.T)
    H_raw = hessian_dense(SPEC, inst, w, include_mu_shift=False)
    np.testing.assert_allclose(
        H_raw - H, mu_shift(SPEC, inst, w) * np.eye(24), atol=1e-12)


def test_hessian_dense_size_guard():
    inst = generate_instance(16, 2.0, seed=0)
    object.__setattr__(inst, "N", 10000)   # simulate an oversized request
    with pytest.raises(MemoryError):
        hessian_dense(SPEC, inst, np.zeros(10000))


def test_hessian_is_curvature_of_objective():
    # H (without shift) is twice the Hessian of L: compare its action against
    # a central difference of the gradient
    inst = generate_instance(20, 2.5, seed=7)
    w = _state(inst, 8)
    rng = np.random.default_rng(9)
    u = rng.standard_normal(20)
    u /= np.linalg.norm(u)
    h = 1e-5
    fd = (gradient(SPEC, inst, w + h * u) - gradient(SPEC, inst, w - h * u)) / (2 * h)
    Hu = hessian_times_vector(SPEC, inst, w, u, include_mu_shift=False)
    np.testing.assert_allclose(Hu, 2.0 * fd, rtol=1e-5, atol=1e-5)


def test_matvec_matches_dense():
    inst = generate_instance(32, 3.0, seed=10)
    w = _state(inst, 11)
    H = hessian_dense(SPEC, inst, w)
    rng = np.random.default_rng(12)
    for _ in range(3):
        u = rng.standard_normal(32)
        np.testing.assert_allclose(hessian_times_vector(SPEC, inst, w, u),
                                   H @ u, rtol=1e-10, atol=1e-10)
    with pytest.raises(ValueError):
        hessian_times_vector(SPEC, inst, w, np.zeros(31))


def test_weight_override_builds_wishart():
    inst = generate_instance(16, 4.0, seed=13)
    w = _state(inst, 14)
    H = hessian_dense(SPEC, inst, w, weight_override=1.0)
    np.testing.assert_allclose(H, inst.sensing.T @ inst.sensing, atol=1e-12)


# ===== eigensolvers =====

def test_extreme_eigenpair_matches_dense_ends():
    inst = generate_instance(64, 3.0, seed=15)
    w = _state(inst, 16)
    H = hessian_dense(SPEC, inst, w)
    evals = np.linalg.eigvalsh(H)
    lam_lo, v_lo = extreme_eigenpair(SPEC, inst, w, which="smallest")
    lam_hi, v_hi = extreme_eigenpair(SPEC, inst, w, which="largest")
    assert lam_lo == pytest.approx(evals[0], abs=1e-7)
    assert lam_hi == pytest.approx(evals[-1], abs=1e-7)
    for lam, v in ((lam_lo, v_lo), (lam_hi, v_hi)):
        residual = np.linalg.norm(hessian_times_vector(SPEC, inst, w, v) - lam * v)
        assert residual < 1e-5


def test_extreme_eigenpair_validation():
    inst = generate_instance(16, 2.0, seed=0)
    w = _state(inst, 0)
    with pytest.raises(ValueError):
        extreme_eigenpair(SPEC, inst, w, which="middle")
    with pytest.raises(ValueError):
        extreme_eigenpair(SPEC, inst, w, tol=0.0)


def test_full_spectrum_report():
    inst = generate_instance(48, 3.0, seed=17)
    w = _state(inst, 18)
    report = full_spectrum(SPEC, inst, w)
    H = hessian_dense(SPEC, inst, w)
    np.testing.assert_allclose(report.eigenvalues, np.linalg.eigvalsh(H),
                               atol=1e-10)
    assert report.lambda_min == pytest.approx(report.eigenvalues[0])
    assert np.all(np.diff(report.eigenvalues) >= -1e-12)
    assert report.mu_shift == pytest.approx(mu_shift(SPEC, inst, w))
    v = report.v_min
    assert report.signal_overlap_sq == pytest.approx(
        float(v @ inst.signal) ** 2 / inst.N)


def test_spectrum_at_signal_is_nonnegative():
    inst = generate_instance(32, 3.0, seed=19)
    report = full_spectrum(SPEC, inst, inst.signal)
    assert report.lambda_min >= -1e-10


# ===== outlier detection and histograms =====

def test_detect_outlier_synthetic():
    bulk = np.linspace(1.0, 2.0, 200)
    detached, bulk_left = detect_outlier(np.concatenate([[0.0], bulk]))
    assert detached
    assert bulk_left == pytest.approx(1.0)
    attached, edge = detect_outlier(bulk)
    assert not attached
    assert edge == pytest.approx(1.0)
    assert detect_outlier(np.array([1.0, 2.0]))[0] is False


def test_empirical_density_normalized():
    rng = np.random.default_rng(20)
    hist = empirical_density(rng.standard_normal(5000), bins=40)
    widths = np.diff(hist.edges)
    assert float(np.sum(hist.density * widths)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        empirical_density(np.array([]))
    with pytest.raises(ValueError):
        empirical_density(np.ones(10), bins=5)
