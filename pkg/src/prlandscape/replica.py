"""Threshold-state statistics from a one-step replica-symmetry-breaking
computation at zero temperature.

The free energy phi(chi, z, q0) couples an entropic part to an energetic
double expectation over (r0, eta) ~ N(0,1) x N(0,q0) of log K, where

    K(r0, eta) = int dEtaP / sqrt(2 pi (1-q0))
                 exp(-EtaP^2 / (2(1-q0)) - z Psi0(r0, EtaP, eta, chi)),
    Psi0 = min_r [ loss(r0, r) + (EtaP + eta - r)^2 / (2 chi) ].

Stationarity in (chi, q0) plus a marginal-stability condition fixing z
(the mu-shifted bulk left edge of the Hessian vanishes on threshold states)
determine the saddle. The resulting joint label density p(y, yhat) feeds the
spectral solver, whose BBP threshold on these states is the headline output.

The saddle residuals returned here are normalized to equal the partial
derivatives of the free energy (the displayed stationarity equations scale
them by 2 and 2/z respectively), so finite differences of `free_energy_1rsb`
cross-check them directly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .model import LossSpec, dloss_dyhat, loss_pair
from .rmt import Replica1RSBDensity, left_edge
from .rmt import _half_gaussian_panels  # loss-scale-aware half-axis quadrature

Q0_FLOOR = 1e-12          # below this q0 is treated as exactly zero
Q0_CEILING = 0.97


@dataclass(frozen=True)
class SaddleParams:
    chi: float
    z: float
    q0: float
    m_overlap: float = 0.0

    def __post_init__(self) -> None:
        if not (self.chi > 0):
            raise ValueError("chi must be positive")
        if not (self.z > 0):
            raise ValueError("z must be positive")
        if not (0 <= self.q0 < 1):
            raise ValueError("q0 must lie in [0, 1)")
        if self.m_overlap != 0.0:
            raise ValueError("m_overlap is fixed to zero at this saddle")


@dataclass(frozen=True)
class QuadratureSpec:
    """Node counts for the nested expectations; double to check convergence."""

    r0_nodes_per_panel: int = 16      # half-axis panels, loss-scale refined
    eta_order: int = 40               # Gauss-Hermite order for eta
    inner_half_width: float = 13.0    # u / yhat grid extends to +-this
    inner_panel_width: float = 0.55
    inner_nodes_per_panel: int = 12
    eta_fd_step: float = 1e-3         # q0 = 0 variance derivative step

    def doubled(self) -> "QuadratureSpec":
        return replace(
            self,
            r0_nodes_per_panel=2 * self.r0_nodes_per_panel,
            eta_order=2 * self.eta_order,
            inner_panel_width=0.5 * self.inner_panel_width,
        )


DEFAULT_QUADRATURE = QuadratureSpec()


# ===== inner minimization =====

def psi0(spec: LossSpec, r0: float, etaP: float, eta: float, chi: float) -> float:
    """Global minimum over r of loss(r0, r) + (etaP + eta - r)^2 / (2 chi).

    Coarse scan (resolution 1e-2 on a bracket wide enough to contain every
    stationary point) followed by local refinement. The objective is a
    quartic plus a quadratic and can have several local minima.
    """
    if chi <= 0:
        raise ValueError("chi must be positive")
    u = etaP + eta
    R = 3.0 * (abs(u) + abs(r0)) + 5.0
    grid = np.arange(-R, R + 0.01, 0.01)
    obj = loss_pair(spec, r0, grid) + (u - grid) ** 2 / (2.0 * chi)
    k = int(np.argmin(obj))
    lo = grid[max(k - 1, 0)]
    hi = grid[min(k + 1, len(grid) - 1)]
    res = minimize_scalar(
        lambda r: float(loss_pair(spec, r0, r) + (u - r) ** 2 / (2.0 * chi)),
        bounds=(lo, hi),
        method="bounded",
        options={"xatol": 1e-12},
    )
    return float(min(res.fun, obj[k]))


def _psi0_closed_form(spec: LossSpec, r0, u, chi):
    """Vectorized Psi0 via the cubic stationarity condition.

    Returns (psi, r_star, dpsi_dEtaP); broadcasting over all inputs. The
    stationary points solve 4 chi r^3 + (s - 4 chi r0^2) r - s u = 0 with
    s = a + r0^2; real roots come from the trigonometric/Cardano formulas,
    each polished by two Newton steps, and the loss+penalty objective picks
    the global minimizer.
    """
    r0, u = np.broadcast_arrays(np.asarray(r0, float), np.asarray(u, float))
    s = spec.a + r0**2
    p = (s - 4.0 * chi * r0**2) / (4.0 * chi)
    q = -s * u / (4.0 * chi)
    disc = -4.0 * p**3 - 27.0 * q**2

    three = disc > 0
    candidates = np.empty((3,) + r0.shape, dtype=np.float64)
    # three real roots (requires p < 0 there)
    p3 = np.where(three, p, -1.0)
    m2 = 2.0 * np.sqrt(-p3 / 3.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.clip(3.0 * q / (p3 * m2), -1.0, 1.0)
    theta = np.arccos(c)
    for k in range(3):
        candidates[k] = m2 * np.cos(theta / 3.0 - 2.0 * math.pi * k / 3.0)
    # single real root branch
    R2 = np.maximum(q**2 / 4.0 + p**3 / 27.0, 0.0)
    Rr = np.sqrt(R2)
    single = np.cbrt(-q / 2.0 + Rr) + np.cbrt(-q / 2.0 - Rr)
    for k in range(3):
        candidates[k] = np.where(three, candidates[k], single)

    lin = s - 4.0 * chi * r0**2
    for _ in range(2):                      # Newton polish on the cubic
        g = 4.0 * chi * candidates**3 + lin * candidates - s * u
        gp = 12.0 * chi * candidates**2 + lin
        step = np.where(np.abs(gp) > 1e-30, g / np.where(gp == 0, 1.0, gp), 0.0)
        candidates = candidates - step

    obj = (r0**2 - candidates**2) ** 2 / s + (u - candidates) ** 2 / (2.0 * chi)
    pick = np.argmin(obj, axis=0)
    psi = np.take_along_axis(obj, pick[None], axis=0)[0]
    r_star = np.take_along_axis(candidates, pick[None], axis=0)[0]
    dpsi = (u - r_star) / chi
    return psi, r_star, dpsi


# ===== quadrature grids =====

def _eta_nodes(q0: float, quad: QuadratureSpec):
    """Folded Gauss-Hermite nodes for eta = sqrt(q0) xi, xi ~ N(0,1).

    All integrands are even in eta, so only nonnegative nodes are kept with
    doubled weights. At q0 = 0 the single node eta = 0 is exact.
    """
    if q0 <= Q0_FLOOR:
        return np.array([0.0]), np.array([1.0])
    x, w = np.polynomial.hermite_e.hermegauss(quad.eta_order)
    w = w / math.sqrt(2.0 * math.pi)
    keep = x > 0
    return math.sqrt(q0) * x[keep], 2.0 * w[keep]


def _inner_grid(quad: QuadratureSpec):
    """Symmetric Gauss-Legendre panel grid for the u = EtaP + eta axis.

    Psi0(r0, u) has a derivative kink at u = 0 where the global minimizer
    jumps between the two wells; a panel edge sits exactly there, so each
    panel sees a smooth integrand and the rule converges exponentially.
    """
    W = quad.inner_half_width
    n_panels = max(2, int(math.ceil(W / quad.inner_panel_width)))
    edges = np.linspace(0.0, W, n_panels + 1)
    nodes, weights = np.polynomial.legendre.leggauss(quad.inner_nodes_per_panel)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        xs.append(mid + half * nodes)
        ws.append(half * weights)
    x = np.concatenate(xs)
    w = np.concatenate(ws)
    return np.concatenate([-x[::-1], x]), np.concatenate([w[::-1], w])


def _r0_nodes(spec: LossSpec, quad: QuadratureSpec):
    return _half_gaussian_panels(spec.a, quad.r0_nodes_per_panel)


# ===== energetic expectations =====

def _inner_stats(spec, chi: float, z: float, q0: float, r0, eta, quad):
    """Per-(r0, eta) inner-integral statistics, integrating over u = EtaP + eta.

    Returns (logK, <dPsi0/dEtaP ^2>, <EtaP^2>) with shapes (len(r0), len(eta));
    the brackets are averages under the normalized inner weight. Substituting
    u for EtaP keeps the quadrature grid independent of eta and q0 (only the
    shifted Gaussian weight moves), and dPsi0/dEtaP = dPsi0/du.
    """
    t, wt = _inner_grid(quad)
    one_m = 1.0 - q0
    psi, _, dpsi = _psi0_closed_form(spec, r0[:, None], t[None, :], chi)
    logw = (
        np.log(wt)[None, None, :]
        - (t[None, None, :] - eta[None, :, None]) ** 2 / (2.0 * one_m)
        - z * psi[:, None, :]
        - 0.5 * math.log(2.0 * math.pi * one_m)
    )
    m = np.max(logw, axis=2, keepdims=True)
    rel = np.exp(logw - m)
    norm = np.sum(rel, axis=2)
    logK = m[:, :, 0] + np.log(norm)
    pw = rel / norm[:, :, None]
    e_dpsi2 = np.sum(pw * dpsi[:, None, :] ** 2, axis=2)
    e_t2 = np.sum(pw * (t[None, None, :] - eta[None, :, None]) ** 2, axis=2)
    return logK, e_dpsi2, e_t2


def free_energy_1rsb(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Zero-temperature free energy phi(chi, z, q0) at sampling ratio alpha."""
    chi, z, q0 = params.chi, params.z, params.q0
    denom = chi + z * (1.0 - q0)
    entropic = -math.log(denom / chi) / (2.0 * z) - 0.5 * q0 / denom
    r0, wr0 = _r0_nodes(spec, quad)
    eta, weta = _eta_nodes(q0, quad)
    logK, _, _ = _inner_stats(spec, chi, z, q0, r0, eta, quad)
    e_logK = float(wr0 @ logK @ weta)
    return entropic - (alpha / z) * e_logK


def saddle_residuals(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> tuple[float, float]:
    """(d phi / d chi, d phi / d q0) evaluated analytically.

    Zero at a stationary point; identical zero set to the displayed
    stationarity equations, which are these derivatives times 2 and 2/z.
    """
    chi, z, q0 = params.chi, params.z, params.q0
    one_m = 1.0 - q0
    denom = chi + z * one_m
    r0, wr0 = _r0_nodes(spec, quad)
    eta, weta = _eta_nodes(q0, quad)
    logK, e_dpsi2, e_t2 = _inner_stats(spec, chi, z, q0, r0, eta, quad)

    res_chi = 0.5 * (
        (1.0 / chi - 1.0 / denom) / z
        + q0 / denom**2
        - alpha * float(wr0 @ e_dpsi2 @ weta)
    )

    if q0 > Q0_FLOOR:
        xi_sq = eta**2 / q0
        variance_term = float(
            wr0 @ logK @ (weta * (xi_sq - 1.0)) / (2.0 * q0)
        )
    else:
        # d/dq0 of E_{eta ~ N(0,q0)} at q0 = 0 equals half the second
        # eta-derivative; logK is even in eta
        h = quad.eta_fd_step
        logK_h, _, _ = _inner_stats(spec, chi, z, q0, r0, np.array([h]), quad)
        variance_term = float(wr0 @ (logK_h[:, 0] - logK[:, 0])) / h**2
    e_t2_mean = float(wr0 @ e_t2 @ weta)
    res_q0 = (
        -0.5 * q0 * z / denom**2
        - (alpha / z) * (
            variance_term
            + 0.5 / one_m
            - 0.5 * e_t2_mean / one_m**2
        )
    )
    return float(res_chi), float(res_q0)


# ===== threshold-state label density and marginal stability =====

def joint_density_1rsb(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> Replica1RSBDensity:
    """Joint label density p(y, yhat) of threshold states as quadrature atoms.

    The density is the functional derivative of the free energy with respect
    to the per-sample loss. By the envelope theorem that derivative passes
    through the inner minimization, so the estimated label concentrates on
    the minimizer rstar(y, u) of the inner objective rather than on the
    Gaussian cavity field u itself: conditioned on (y, eta), the field u
    carries weight exp(-(u - eta)^2 / (2(1-q0)) - z Psi0(y, u)) / Z(y, eta),
    and the label atom sits at yhat = rstar(y, u). Atoms live on the (y, u)
    tensor grid with the eta average folded into the weights; each
    conditional is normalized on its own grid, by the same normalizer Z that
    appears in the free energy.
    """
    chi, z, q0 = params.chi, params.z, params.q0
    y, wy = _r0_nodes(spec, quad)
    eta, weta = _eta_nodes(q0, quad)
    t, wt = _inner_grid(quad)                          # u grid
    one_m = 1.0 - q0
    psi_u, rstar, _ = _psi0_closed_form(spec, y[:, None], t[None, :], chi)
    logw = (
        np.log(wt)[None, None, :]
        - (t[None, None, :] - eta[None, :, None]) ** 2 / (2.0 * one_m)
        - z * psi_u[:, None, :]
    )
    m = np.max(logw, axis=2, keepdims=True)
    rel = np.exp(logw - m)
    pw = rel / np.sum(rel, axis=2, keepdims=True)      # p(u | y, eta) du
    cond = np.einsum("b,abc->ac", weta, pw)            # eta averaged
    cond = 0.5 * (cond + cond[:, ::-1])                # rstar is odd in u
    weights = wy[:, None] * cond
    yy = np.broadcast_to(y[:, None], weights.shape)
    return Replica1RSBDensity(
        spec.a,
        weights.ravel(),
        yy.ravel(),
        rstar.ravel(),
        params={"chi": chi, "z": z, "q0": q0, "alpha": alpha},
    )


def density_mu_shift(density, alpha: float) -> float:
    """Spherical-constraint shift mu = alpha E[yhat d loss/d yhat].

    This is the multiplier paired with the sample-curvature matrix
    sum_i f_i x_i x_i^T whose bulk `rmt.left_edge` describes: on a spherical
    stationary point the constrained curvature is proportional to that matrix
    minus mu I, so marginal stability reads "shifted left edge at zero". (The
    per-instance flow multiplier `spectrum.mu_shift` is w.grad L / N, half of
    this value, because grad^2 L carries the 1/2 of the total loss.)
    """
    spec = LossSpec(density.loss_a)
    vals = density.yhat * dloss_dyhat(spec, density.y, density.yhat)
    return alpha * float(density.expect_values(vals))


def marginality_residual(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Shifted bulk left edge lambda_-(unshifted) - mu; zero on threshold states."""
    density = joint_density_1rsb(spec, alpha, params, quad)
    _, lam_minus = left_edge(density, alpha)
    return lam_minus - density_mu_shift(density, alpha)


def replicon_residual(
    spec: LossSpec,
    alpha: float,
    params: SaddleParams,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
) -> float:
    """Replicon stability residual alpha chi^2 E[(f / (1 + chi f))^2] - 1.

    Zero marks marginal stability of the saddle. On the chi-stationary
    manifold this vanishes together with `marginality_residual`: the bulk
    Stieltjes transform of the sample-curvature matrix then reaches its left
    edge exactly at S = -chi, where the edge location z(-chi) equals the
    spherical shift mu. It costs one density build instead of an edge solve,
    so it doubles as a cheap cross-check on the solved saddle.
    """
    density = joint_density_1rsb(spec, alpha, params, quad)
    f = density.curvature
    kernel = (f / (1.0 + params.chi * f)) ** 2
    return alpha * params.chi**2 * float(density.expect_values(kernel)) - 1.0


# ===== saddle solve =====

@dataclass
class SolveResult:
    params: SaddleParams
    converged: bool
    residuals: tuple[float, float, float]   # (d_chi phi, d_q0 phi, marginality)
    iterations: int
    alpha: float
    message: str = ""


class ConvergenceError(RuntimeError):
    """Raised when a bracket for a saddle unknown cannot be established."""


def _bracketed_root(
    f,
    lo: float,
    hi: float,
    lo_limit: float,
    hi_limit: float,
    xtol: float = 1e-13,
) -> float:
    """brentq on f over a log-space bracket, expanding toward the limits.

    The bracket grows geometrically on the side with the smaller residual
    until the endpoint signs straddle a root. `xtol` applies in log space,
    i.e. it is a relative tolerance on the root.
    """
    flo, fhi = f(lo), f(hi)
    for _ in range(40):
        if flo == 0.0:
            return lo
        if fhi == 0.0:
            return hi
        if flo * fhi < 0:
            break
        if abs(flo) < abs(fhi):
            if lo <= lo_limit:
                raise ConvergenceError("no sign change down to the bracket limit")
            lo = max(lo / 4.0, lo_limit)
            flo = f(lo)
        else:
            if hi >= hi_limit:
                raise ConvergenceError("no sign change up to the bracket limit")
            hi = min(hi * 4.0, hi_limit)
            fhi = f(hi)
    else:
        raise ConvergenceError("bracket expansion failed")
    return math.exp(brentq(lambda x: f(math.exp(x)), math.log(lo), math.log(hi),
                           xtol=xtol, rtol=8.9e-16))


def _chi_root(
    spec: LossSpec,
    alpha: float,
    z: float,
    q0: float,
    quad: QuadratureSpec,
    chi_guess: float,
) -> float:
    """chi-stationary point at fixed (z, q0): single sign change in chi."""

    def f(chi: float) -> float:
        return saddle_residuals(spec, alpha, SaddleParams(chi, z, q0), quad)[0]

    lo = max(chi_guess / 2.0, 1e-6)
    hi = min(chi_guess * 2.0, 1e3)
    return _bracketed_root(f, lo, hi, 1e-6, 1e3)


_Q0_SCAN = (0.15, 0.35, 0.55, 0.75, 0.9)


def _inner_point(
    spec: LossSpec,
    alpha: float,
    z: float,
    quad: QuadratureSpec,
    state: dict,
) -> tuple[float, float]:
    """Jointly (chi, q0)-stationary point at fixed z.

    The q0 derivative vanishes identically at the symmetric point q0 = 0, so
    the symmetry-broken branch is located by scanning the q0 stationarity
    residual along the chi-stationary manifold for a (+, -) sign change — the
    free-energy maximum in q0, which supersedes the symmetric point when it
    exists. No sign change means the symmetric point is the only stationary
    one. `state` warm-starts the chi bracket and the q0 scan from the
    previous call; both move slowly along the outer z search.
    """
    chi_hint = {"chi": state["chi"]}

    def res_q0_on_manifold(q0: float) -> float:
        chi = _chi_root(spec, alpha, z, q0, quad, chi_hint["chi"])
        chi_hint["chi"] = chi
        return saddle_residuals(spec, alpha, SaddleParams(chi, z, q0), quad)[1]

    bracket = None
    prev = state["q0"]
    if prev > 0.05:
        lo = max(prev - 0.08, 0.02)
        hi = min(prev + 0.08, Q0_CEILING)
        try:
            if res_q0_on_manifold(lo) > 0.0 > res_q0_on_manifold(hi):
                bracket = (lo, hi)
        except ConvergenceError:
            pass
    if bracket is None:
        vals: list[tuple[float, float | None]] = []
        for q in _Q0_SCAN:
            try:
                vals.append((q, res_q0_on_manifold(q)))
            except ConvergenceError:
                vals.append((q, None))
        for (qa, ra), (qb, rb) in zip(vals, vals[1:]):
            if ra is not None and rb is not None and ra > 0.0 > rb:
                bracket = (qa, qb)
    if bracket is None:
        q0 = 0.0
    else:
        q0 = float(brentq(res_q0_on_manifold, *bracket, xtol=1e-7))
    chi = _chi_root(spec, alpha, z, q0, quad, chi_hint["chi"])
    state["chi"], state["q0"] = chi, q0
    return chi, q0


def _solve_at_alpha(
    spec: LossSpec,
    alpha: float,
    guess: SaddleParams,
    quad: QuadratureSpec,
    tol: float,
) -> SolveResult:
    """Marginal stability in z on top of inner (chi, q0) stationarity.

    For each z the inner stationary point is found by nested bracketed
    root-finding (each unknown has a single sign change, and the nesting
    stays clear of the degenerate large-(chi, z) valley where every residual
    flattens to zero). The outer search drives the replicon residual to zero:
    the shifted bulk left edge itself cannot bracket, because it touches zero
    from above at the marginal z (the edge is nonnegative on stationary
    densities), while the replicon residual crosses with a clean sign change
    and vanishes at the same z. The reported marginality residual is the
    shifted edge at the solution.
    """
    evals = {"n": 0}
    state = {"chi": guess.chi, "q0": guess.q0, "z": guess.z}

    def replicon_at(z: float) -> float:
        evals["n"] += 1
        chi, q0 = _inner_point(spec, alpha, z, quad, state)
        state["z"] = z
        return replicon_residual(spec, alpha, SaddleParams(chi, z, q0), quad)

    z_lo = max(guess.z / 2.0, 1e-3)
    z_hi = min(guess.z * 2.0, 50.0)
    failure = ""
    try:
        z = _bracketed_root(replicon_at, z_lo, z_hi, 1e-3, 50.0, xtol=1e-6)
    except ConvergenceError as err:
        if evals["n"] == 0:
            raise
        failure = f"marginality bracket failed: {err}"     # best iterate below
        z = state["z"]
    chi, q0 = _inner_point(spec, alpha, z, quad, state)
    params = SaddleParams(chi=chi, z=z, q0=q0)
    res_chi, res_q0 = saddle_residuals(spec, alpha, params, quad)
    marg = marginality_residual(spec, alpha, params, quad)
    residuals = (res_chi, res_q0, marg)
    converged = not failure and max(abs(r) for r in residuals) <= tol
    branch = (f"symmetry-broken branch, q0 = {q0:.4f}" if q0 > 0
              else "symmetric branch, q0 = 0")
    if converged:
        message = branch
    else:
        message = failure or f"residual tolerance not met ({branch})"
    return SolveResult(
        params=params, converged=converged, residuals=residuals,
        iterations=evals["n"], alpha=alpha, message=message,
    )


DEFAULT_GUESS = SaddleParams(chi=0.08, z=0.22, q0=0.0)


def solve_threshold_state(
    spec: LossSpec,
    alpha: float,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    tol: float = 1e-5,
    guess: SaddleParams | None = None,
) -> SolveResult:
    """Solve (chi, z, q0) at the given sampling ratio.

    `guess` centers the bracket search; the default sits in the basin of the
    physical branch (chi well below one, z well below one), away from the
    degenerate large-(chi, z) valley. When the free energy has a
    symmetry-broken stationary point in q0 the solver returns that branch —
    it dominates the symmetric one (higher free energy) wherever both exist.
    """
    return _solve_at_alpha(spec, alpha, guess or DEFAULT_GUESS, quad, tol)


def threshold_bbp_alpha(
    spec: LossSpec,
    alpha0: float = 4.3,
    quad: QuadratureSpec = DEFAULT_QUADRATURE,
    tol: float = 1e-3,
    max_iter: int = 12,
) -> tuple[float, SolveResult]:
    """Self-consistent BBP ratio of threshold states.

    Finds the root of g(alpha) = bbp_alpha(density at alpha) - alpha: the
    sampling ratio whose own threshold states sit exactly at the spectral
    transition. g falls faster than alpha rises (slope near -2.4 at the
    root), so plain fixed-point iteration on alpha -> bbp_alpha diverges; a
    bracketed secant iteration with warm-started saddle solves is used
    instead.
    """
    from .rmt import bbp_alpha as rmt_bbp_alpha

    def g_eval(a: float, warm: SaddleParams | None) -> tuple[float, SolveResult]:
        result = solve_threshold_state(spec, a, quad, guess=warm)
        density = joint_density_1rsb(spec, a, result.params, quad)
        return float(rmt_bbp_alpha(density)) - a, result

    a_prev = float(alpha0)
    g_prev, result = g_eval(a_prev, None)
    if abs(g_prev) <= tol:
        return a_prev, result
    below = above = None            # bracket endpoints (a, g) with g > 0 / g < 0
    if g_prev > 0:
        below = (a_prev, g_prev)
    else:
        above = (a_prev, g_prev)
    a = a_prev + max(-0.2, min(0.2, g_prev / 2.0))
    for _ in range(max_iter):
        g_cur, result = g_eval(a, result.params)
        if abs(g_cur) <= tol:
            return float(a), result
        if g_cur > 0:
            below = (a, g_cur)
        else:
            above = (a, g_cur)
        denom = g_cur - g_prev
        step = -g_cur * (a - a_prev) / denom if abs(denom) > 1e-14 else 0.0
        a_prev, g_prev = a, g_cur
        cand = a + max(-0.3, min(0.3, step))
        if below is not None and above is not None:
            lo, hi = min(below[0], above[0]), max(below[0], above[0])
            if step == 0.0 or not (lo < cand < hi):
                cand = 0.5 * (lo + hi)
        a = cand
    raise ConvergenceError("self-consistent ratio did not converge")
