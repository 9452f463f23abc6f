"""Hessian spectra along trajectories: dense builds, matrix-free products,
extreme eigenpairs, and empirical densities.

The Hessian of the descent at state w is

    H = sum_i f(y_i, yhat_i) x_i x_i^T - mu I,

with f the label curvature of the loss and mu the spherical multiplier of the
descent update, mu = (w . grad L) / N = (1/2N) sum_i dl/dyhat_i * yhat_i.
This is the shift that makes threshold states marginal: on constrained
plateaus the bulk's left edge lands on mu (shifted edge at zero).  Note the
weighted sum is that of the unhalved per-sample losses, so H (without the
shift) equals twice the Hessian of L = (1/2) sum l; spectral predictions and
empirical spectra both use this normalization consistently.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from .model import Instance, LossSpec, curvature_weight, dloss_dyhat, predicted_labels

DENSE_N_LIMIT = 8192        # hessian_dense guard
FULL_SPECTRUM_N_LIMIT = 4096
DETACH_GAP_FACTOR = 5.0     # outlier when gap > 5x near-edge bulk spacing
DETACH_EDGE_COUNT = 32      # bulk eigenvalues used for the spacing estimate


class ConvergenceError(RuntimeError):
    """Iterative eigensolver failed; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass
class SpectrumReport:
    eigenvalues: np.ndarray      # ascending, length N
    lambda_min: float
    v_min: np.ndarray            # unit eigenvector of lambda_min
    signal_overlap_sq: float     # (v_min . w*)^2 / N
    mu_shift: float              # shift applied (0 when not included)
    outlier_detached: bool
    bulk_left_estimate: float


def sample_weights(
    spec: LossSpec, inst: Instance, w: np.ndarray, weight_override=None
) -> np.ndarray:
    """Per-sample curvature weights f_i at state w (optionally overridden)."""
    if weight_override is not None:
        return np.broadcast_to(np.asarray(weight_override, dtype=float), (inst.M,)).copy()
    yhat = predicted_labels(inst, w)
    return curvature_weight(spec, inst.labels, yhat)


def mu_shift(spec: LossSpec, inst: Instance, w: np.ndarray) -> float:
    """mu = (w . grad L) / N = (1/2N) sum_i dl/dyhat_i * yhat_i.

    The multiplier the renormalized flow subtracts to stay on the sphere;
    zero at the planted signal. All spectra in this module are reported in
    the convention H = sum_i f_i x_i x_i^T - mu I with this mu.
    """
    yhat = predicted_labels(inst, w)
    return 0.5 * float(np.sum(dloss_dyhat(spec, inst.labels, yhat) * yhat)) / inst.N


def hessian_dense(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    include_mu_shift: bool = True,
    weight_override=None,
) -> np.ndarray:
    """Materialize H = sum_i f_i x_i x_i^T (- mu I); exactly symmetric."""
    if inst.N > DENSE_N_LIMIT:
        raise MemoryError(f"dense Hessian refused for N = {inst.N} > {DENSE_N_LIMIT}")
    f = sample_weights(spec, inst, w, weight_override)
    X = inst.sensing
    H = np.zeros((inst.N, inst.N))
    chunk = max(1, int(2**25 // max(inst.N, 1)))   # bounds the f*X temporary
    for lo in range(0, inst.M, chunk):
        hi = min(lo + chunk, inst.M)
        H += (f[lo:hi, None] * X[lo:hi]).T @ X[lo:hi]
    H = 0.5 * (H + H.T)
    if include_mu_shift and weight_override is None:
        H[np.diag_indices_from(H)] -= mu_shift(spec, inst, w)
    return H


def hessian_times_vector(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    u: np.ndarray,
    include_mu_shift: bool = True,
    weight_override=None,
) -> np.ndarray:
    """H @ u in O(MN) without forming H."""
    u = np.asarray(u, dtype=float)
    if u.shape != (inst.N,):
        raise ValueError(f"u has shape {u.shape}, expected ({inst.N},)")
    f = sample_weights(spec, inst, w, weight_override)
    out = (f * (inst.sensing @ u)) @ inst.sensing
    if include_mu_shift and weight_override is None:
        out -= mu_shift(spec, inst, w) * u
    return out


class _HessianOperator(spla.LinearOperator):
    """Matrix-free symmetric operator wrapping hessian_times_vector."""

    def __init__(self, spec, inst, w, include_mu_shift=True, weight_override=None):
        super().__init__(dtype=np.float64, shape=(inst.N, inst.N))
        self.f = sample_weights(spec, inst, w, weight_override)
        self.X = inst.sensing
        self.mu = (
            mu_shift(spec, inst, w)
            if include_mu_shift and weight_override is None
            else 0.0
        )

    def _matvec(self, u):
        u = np.asarray(u).ravel()
        out = (self.f * (self.X @ u)) @ self.X
        if self.mu:
            out = out - self.mu * u
        return out


def extreme_eigenpair(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    which: str = "smallest",
    tol: float = 1e-9,
    include_mu_shift: bool = True,
    weight_override=None,
) -> tuple[float, np.ndarray]:
    """Extreme eigenpair of H by implicitly restarted Lanczos on the matvec.

    The smallest eigenvalue is obtained by running on c*I - H with c an
    upper bound on lambda_max from a short power iteration, which turns the
    target into the dominant end of the spectrum.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    if which not in ("smallest", "largest"):
        raise ValueError(f"which must be 'smallest' or 'largest', got {which!r}")
    op = _HessianOperator(spec, inst, w, include_mu_shift, weight_override)

    rng = np.random.default_rng(12345)
    v = rng.standard_normal(inst.N)
    v /= np.linalg.norm(v)
    bound = 0.0
    for _ in range(30):
        hv = op._matvec(v)
        bound = float(np.linalg.norm(hv))
        v = hv / bound
    c = 1.25 * bound + 1.0

    if which == "smallest":
        shifted = spla.LinearOperator(
            shape=op.shape, dtype=np.float64, matvec=lambda u: c * u - op._matvec(u)
        )
    else:
        shifted = spla.LinearOperator(
            shape=op.shape, dtype=np.float64, matvec=lambda u: c * u + op._matvec(u)
        )
    def _solve(v0=None, ncv=None):
        try:
            _, vecs = spla.eigsh(
                shifted, k=1, which="LA", tol=tol, maxiter=100 * inst.N,
                v0=v0, ncv=ncv,
            )
        except spla.ArpackNoConvergence as err:
            raise ConvergenceError(
                "eigsh did not converge", residual=float("nan")
            ) from err
        vec = vecs[:, 0]
        vec = vec / np.linalg.norm(vec)
        hv = op._matvec(vec)
        lam = float(vec @ hv)       # Rayleigh quotient, exact for the returned vector
        residual = float(np.linalg.norm(hv - lam * vec))
        return lam, vec, residual

    # ARPACK's tol is relative to the shifted operator's scale (~c), so the
    # acceptance threshold must be too
    threshold = max(100 * tol, 1e-7) * max(1.0, c)
    lam, vec, residual = _solve()
    if residual > threshold:
        lam, vec, residual = _solve(v0=vec, ncv=min(inst.N, 80))
        if residual > threshold:
            raise ConvergenceError(
                "eigenpair residual above tolerance", residual=residual
            )
    return lam, vec


def full_spectrum(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    include_mu_shift: bool = True,
    weight_override=None,
) -> SpectrumReport:
    """Dense symmetric eigendecomposition with outlier-detachment heuristic."""
    if inst.N > FULL_SPECTRUM_N_LIMIT:
        raise MemoryError(
            f"full spectrum refused for N = {inst.N} > {FULL_SPECTRUM_N_LIMIT}"
        )
    H = hessian_dense(spec, inst, w, include_mu_shift, weight_override)
    evals, evecs = np.linalg.eigh(H)
    v1 = evecs[:, 0]
    mu = (
        mu_shift(spec, inst, w)
        if include_mu_shift and weight_override is None
        else 0.0
    )
    detached, bulk_left = detect_outlier(evals)
    return SpectrumReport(
        eigenvalues=evals,
        lambda_min=float(evals[0]),
        v_min=v1,
        signal_overlap_sq=float(v1 @ inst.signal) ** 2 / inst.N,
        mu_shift=mu,
        outlier_detached=detached,
        bulk_left_estimate=bulk_left,
    )


def detect_outlier(evals: np.ndarray) -> tuple[bool, float]:
    """Detachment when the bottom gap exceeds 5x the near-edge bulk spacing.

    The spacing baseline is the median gap among the DETACH_EDGE_COUNT
    smallest eigenvalues excluding the candidate outlier itself.
    """
    evals = np.sort(np.asarray(evals, dtype=float))
    if evals.size < 4:
        return False, float(evals[0])
    count = min(DETACH_EDGE_COUNT, evals.size - 1)
    bulk = evals[1 : 1 + count]
    spacings = np.diff(bulk)
    baseline = float(np.median(spacings))
    gap = float(evals[1] - evals[0])
    detached = baseline > 0 and gap > DETACH_GAP_FACTOR * baseline
    bulk_left = float(evals[1]) if detached else float(evals[0])
    return detached, bulk_left


@dataclass
class Histogram:
    centers: np.ndarray
    density: np.ndarray
    edges: np.ndarray


def empirical_density(eigenvalues: np.ndarray, bins: int = 60) -> Histogram:
    """Normalized histogram over [min, max] of the eigenvalues."""
    eigenvalues = np.asarray(eigenvalues, dtype=float)
    if eigenvalues.size == 0:
        raise ValueError("empty eigenvalue list")
    if bins < 10:
        raise ValueError("bins must be >= 10")
    density, edges = np.histogram(eigenvalues, bins=bins, density=True)
    centers = 0.5 * (edges[:-1] + edges[1:])
    return Histogram(centers=centers, density=density, edges=edges)
