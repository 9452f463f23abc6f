"""Infinite-size spectral theory for the weighted sample-covariance ensemble
H = sum_i f_i x_i x_i^T with data-dependent curvature weights f_i.

Everything is driven by a joint label density p(y, yhat): the bulk Stieltjes
transform solves S^{-1} = z - alpha E[f / (1 - f S)], the bulk left edge is
the stationary point of z(S) = 1/S + alpha E[f/(1-fS)] on the real branch
below the support, the signal outlier solves z = Sigma(z) with
Sigma(z) = alpha E[f y^2 / (1 - f S(z))], and its eigenvector overlap is
1 / (1 - dSigma/dz). The BBP sampling ratio is where the outlier first
detaches from the left edge.

Branch convention: S(z) = E[1/(z - lambda)], so S ~ 1/z at infinity,
Im S(z) < 0 for Im z > 0, and the spectral density is
rho(lambda) = -(1/pi) Im S(lambda + i eps).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

_trapezoid = getattr(np, "trapezoid", None) or np.trapz

from .model import LossSpec, curvature_weight

FIXED_POINT_TOL = 1e-10
FIXED_POINT_MAX_ITER = 20000
MIN_EMPIRICAL_PAIRS = 10_000
UNBOUNDED_STIELTJES = 1e9          # stands in for S -> -inf scans when f >= 0


class FixedPointError(RuntimeError):
    """Stieltjes fixed-point iteration failed to reach tolerance."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


class BranchError(RuntimeError):
    """Converged Stieltjes value landed on the unphysical branch."""


class StructuralError(RuntimeError):
    """The requested spectral feature does not exist for this density."""


class BracketError(RuntimeError):
    """Root bracketing failed where a root was expected (solver fault,
    distinct from a valid negative result)."""


class PrecisionError(RuntimeError):
    """Input data too small to meet the advertised tolerance."""


# ===== joint label densities =====

class JointLabelDensity:
    """Discrete-atom representation of a joint density of (y, yhat).

    Atom weights sum to one; every expectation the spectral solver needs is a
    weighted sum over atoms, so quadrature-based and sample-based densities
    share one code path. `curvature` caches f(y, yhat) per atom; subclasses
    may override the weight values directly (degenerate oracle densities).
    """

    variant = "base"

    def __init__(
        self,
        loss_a: float | None,
        weights: np.ndarray,
        y: np.ndarray,
        yhat: np.ndarray,
        f_values: np.ndarray | None = None,
        weight_tol: float = 1e-6,
    ):
        self.loss_a = loss_a
        self.weights = np.asarray(weights, dtype=np.float64).ravel()
        self.y = np.asarray(y, dtype=np.float64).ravel()
        self.yhat = np.asarray(yhat, dtype=np.float64).ravel()
        if not (len(self.weights) == len(self.y) == len(self.yhat)):
            raise ValueError("weights, y, yhat must have equal length")
        total = float(np.sum(self.weights))
        if not math.isfinite(total) or abs(total - 1.0) > weight_tol:
            raise ValueError(f"atom weights must sum to 1, got {total}")
        self.weights = self.weights / total
        if f_values is not None:
            self._f = np.asarray(f_values, dtype=np.float64).ravel()
        else:
            if loss_a is None:
                raise ValueError("loss_a is required unless f_values is given")
            self._f = np.asarray(
                curvature_weight(LossSpec(loss_a), self.y, self.yhat),
                dtype=np.float64,
            ).ravel()

    @property
    def curvature(self) -> np.ndarray:
        return self._f

    def expect(self, kernel) -> float:
        """E[g(y, yhat)] for a vectorized kernel g."""
        return float(np.dot(self.weights, kernel(self.y, self.yhat)))

    def expect_values(self, values: np.ndarray):
        """Weighted sum over per-atom values (real or complex)."""
        return np.dot(self.weights, values)

    @property
    def n_atoms(self) -> int:
        return len(self.weights)


class AnalyticInitDensity(JointLabelDensity):
    """y and yhat independent standard Gaussians (the start of descent).

    Expectations use composite Gauss-Legendre panels on each half-axis with
    the Gaussian weight folded in. The panels refine geometrically toward the
    origin so the sqrt(loss_a)-scale structure of the curvature weight is
    resolved; a single global rule at practical node counts misses it.
    """

    variant = "AnalyticInit"

    def __init__(self, loss_a: float, nodes_per_panel: int = 16):
        if nodes_per_panel < 4:
            raise ValueError("nodes_per_panel must be >= 4")
        x, w = _half_gaussian_panels(loss_a, nodes_per_panel)
        # tensor product over (y, yhat); both fold to the half-axis with
        # weight 2*phi since every kernel is even in each argument
        yy, hh = np.meshgrid(x, x, indexing="ij")
        ww = np.outer(w, w)
        super().__init__(loss_a, ww.ravel(), yy.ravel(), hh.ravel())
        self.nodes_per_panel = nodes_per_panel


def _half_gaussian_panels(loss_a: float, nodes_per_panel: int):
    """Nodes/weights integrating E[g(|Z|)] for Z ~ N(0,1) by panels."""
    scale = math.sqrt(max(loss_a, 1e-12))
    edges = [0.0]
    step = min(scale / 8.0, 0.125)
    while edges[-1] + step < 1.0:
        edges.append(edges[-1] + step)
        step *= 2.5
    edges.extend([1.5, 2.5, 4.0, 6.0, 8.5])
    edges = np.unique(np.asarray(edges))
    nodes, weights = np.polynomial.legendre.leggauss(nodes_per_panel)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid, half = 0.5 * (hi + lo), 0.5 * (hi - lo)
        x = mid + half * nodes
        xs.append(x)
        ws.append(half * weights * 2.0 * np.exp(-0.5 * x * x) / math.sqrt(2 * math.pi))
    return np.concatenate(xs), np.concatenate(ws)


class EmpiricalDensity(JointLabelDensity):
    """Uniform atoms over sampled (y, yhat) pairs."""

    variant = "Empirical"

    def __init__(self, loss_a: float, pairs: np.ndarray):
        pairs = np.asarray(pairs, dtype=np.float64)
        if pairs.ndim != 2 or pairs.shape[1] != 2:
            raise ValueError("pairs must have shape (n, 2) with columns (y, yhat)")
        n = pairs.shape[0]
        if n < 1:
            raise ValueError("pairs must be non-empty")
        super().__init__(loss_a, np.full(n, 1.0 / n), pairs[:, 0], pairs[:, 1])

    def require_bbp_precision(self) -> None:
        if self.n_atoms < MIN_EMPIRICAL_PAIRS:
            raise PrecisionError(
                f"BBP estimation needs >= {MIN_EMPIRICAL_PAIRS} pairs, "
                f"got {self.n_atoms}"
            )


class DegenerateWeightDensity(JointLabelDensity):
    """Single-atom density with a constant curvature weight (f == c).

    The ensemble reduces to a scaled white Wishart matrix, giving closed-form
    Marchenko-Pastur edges c(1 ± sqrt(alpha))^2 — the solver's exact oracle.
    """

    variant = "DegenerateWeight"

    def __init__(self, f0: float = 1.0):
        super().__init__(
            None,
            weights=np.array([1.0]),
            y=np.array([0.0]),
            yhat=np.array([0.0]),
            f_values=np.array([float(f0)]),
        )


class Replica1RSBDensity(JointLabelDensity):
    """Joint label density of threshold states, built from quadrature atoms
    produced by the threshold-state solver.

    Each conditional is normalized on its own quadrature grid, so the atom
    weights sum to one up to floating-point roundoff.
    """

    variant = "Replica1RSB"

    def __init__(
        self,
        loss_a: float,
        weights: np.ndarray,
        y: np.ndarray,
        yhat: np.ndarray,
        params: dict | None = None,
    ):
        super().__init__(loss_a, weights, y, yhat)
        self.params = dict(params or {})


# ===== Stieltjes transform =====

def _e_f_over(density: JointLabelDensity, S):
    """E[f / (1 - f S)] for scalar S (real or complex)."""
    f = density.curvature
    return density.expect_values(f / (1.0 - f * S))


def _e_f2_over_sq(density: JointLabelDensity, S):
    f = density.curvature
    return density.expect_values((f / (1.0 - f * S)) ** 2)


def _e_fy2_over(density: JointLabelDensity, S):
    f = density.curvature
    return density.expect_values(f * density.y**2 / (1.0 - f * S))


def _fixed_point(density, alpha: float, z: complex, S0: complex,
                 damping: float = 0.5, warmup: int = 40) -> complex:
    """Solve S = 1/(z - alpha E[f/(1-fS)]).

    A short damped relaxation reaches the basin of the physical branch, then
    Newton steps on F(S) = S (z - alpha E[f/(1-fS)]) - 1 finish the job; the
    plain relaxation map turns neutrally stable as z approaches the real
    axis inside the support, where Newton still converges quadratically.
    """
    S = complex(S0)
    for _ in range(warmup):
        target = 1.0 / (z - alpha * _e_f_over(density, S))
        S = (1.0 - damping) * S + damping * target
    residual = float("inf")
    for _ in range(200):
        denom = z - alpha * _e_f_over(density, S)
        residual = abs(1.0 / denom - S)
        if residual <= FIXED_POINT_TOL * max(1.0, abs(S)):
            return S
        Fprime = denom - S * alpha * _e_f2_over_sq(density, S)
        if Fprime == 0:
            break
        S = S - (S * denom - 1.0) / Fprime
    raise FixedPointError("Stieltjes fixed point did not converge", residual)


def stieltjes_at(density: JointLabelDensity, alpha: float, z: complex) -> complex:
    """Solve S = 1/(z - alpha E[f/(1-fS)]) on the resolvent branch.

    For Im z > 0 the converged S must have Im S < 0 (branch check). Real z
    outside the support is handled by continuation from just off the axis.
    """
    if alpha < 0:
        raise ValueError("alpha must be nonnegative")
    z = complex(z)
    if z.imag > 0:
        S = _fixed_point(density, alpha, z, S0=1.0 / z)
        if S.imag > 1e-12:
            raise BranchError(
                f"Stieltjes branch violation: Im S = {S.imag:.3e} > 0 "
                f"for Im z > 0"
            )
        return S
    if z.imag < 0:
        return stieltjes_at(density, alpha, np.conj(z)).conjugate()
    # real z: seed from slightly off-axis, then polish on the real line
    seed = _fixed_point(density, alpha, z + 1e-9j, S0=1.0 / (z + 1e-9j))
    if abs(seed.imag) > 1e-5 * max(1.0, abs(seed.real)):
        raise BranchError(
            f"z = {z} appears to lie inside the support "
            f"(Im S = {seed.imag:.3e}); use complex z there"
        )
    S = _fixed_point(density, alpha, z + 0.0j, S0=seed.real + 0.0j)
    return complex(S.real)


def _z_of_S(density, alpha: float, S: float) -> float:
    return float(1.0 / S + alpha * np.real(_e_f_over(density, S)))


def _edge_gap(density, alpha: float, S: float) -> float:
    """h(S) = alpha E[f^2/(1-fS)^2] - 1/S^2; zero at a bulk edge."""
    return float(alpha * np.real(_e_f2_over_sq(density, S)) - 1.0 / S**2)


def _scan_grid(limit: float, n: int = 400) -> np.ndarray:
    """Magnitudes in (0, limit), geometric near both 0 and the limit."""
    lo = np.geomspace(limit * 1e-9, limit * 0.5, n // 2)
    hi = limit - np.geomspace(limit * 1e-7, limit * 0.5, n // 2)[::-1]
    return np.unique(np.concatenate([lo, hi]))


def left_edge(density: JointLabelDensity, alpha: float) -> tuple[float, float]:
    """Bulk left edge: stationary point of z(S) on the real branch S < 0.

    Scans S from 0^- toward 1/min(f) for the first sign change of
    h(S) = alpha E[f^2/(1-fS)^2] - 1/S^2, then polishes with brentq.
    Returns (S_minus, lambda_minus).
    """
    f = density.curvature
    fmin = float(np.min(f))
    fabs_max = float(np.max(np.abs(f)))
    if fabs_max == 0:
        raise StructuralError("all curvature weights are zero")
    if fmin < 0:
        # |S| bounded by the pole at 1/|fmin|; refine toward both endpoints
        mags = _scan_grid((-1.0 / fmin) * (1 - 1e-7))
    else:
        # no pole on the negative axis; cover a wide range in units of 1/f
        mags = np.geomspace(1e-9 / fabs_max, 1e7 / fabs_max, 600)
    grid = -mags                     # from ~0^- downward
    prev_S = grid[0]
    prev_h = _edge_gap(density, alpha, prev_S)
    for S in grid[1:]:
        h = _edge_gap(density, alpha, S)
        if prev_h < 0 <= h:
            S_minus = brentq(
                lambda s: _edge_gap(density, alpha, s), S, prev_S,
                xtol=1e-14, rtol=1e-14,
            )
            return float(S_minus), _z_of_S(density, alpha, float(S_minus))
        prev_S, prev_h = S, h
    if fmin >= 0 and alpha <= 1:
        # positive-semidefinite ensemble at or below aspect ratio one:
        # the edge hardens onto zero (z -> 0 as S -> -inf, no stationary point)
        return float("-inf"), 0.0
    raise StructuralError(
        f"no bulk left edge: z(S) has no stationary point on the real "
        f"branch for alpha = {alpha}"
    )


def right_edge(density: JointLabelDensity, alpha: float) -> tuple[float, float]:
    """Bulk right edge: first stationary point of z(S) on 0 < S < 1/max(f)."""
    f = density.curvature
    fmax = float(np.max(f))
    if fmax <= 0:
        raise StructuralError("no bulk right edge: all curvature weights <= 0")
    limit = (1.0 / fmax) * (1 - 1e-7)
    grid = _scan_grid(limit)         # ascending from ~0^+
    prev_S = grid[0]
    prev_h = _edge_gap(density, alpha, prev_S)
    for S in grid[1:]:
        h = _edge_gap(density, alpha, S)
        if prev_h < 0 <= h:
            S_plus = brentq(
                lambda s: _edge_gap(density, alpha, s), prev_S, S,
                xtol=1e-14, rtol=1e-14,
            )
            return float(S_plus), _z_of_S(density, alpha, float(S_plus))
        prev_S, prev_h = S, h
    raise StructuralError(
        f"no bulk right edge stationary point found for alpha = {alpha}"
    )


def _stieltjes_real_below(density, alpha: float, z: float, S_minus: float) -> float:
    """Real-branch S(z) for z strictly below the bulk left edge.

    On S in (S_minus, 0), z(S) decreases monotonically from lambda_minus to
    -inf, so the root is bracketed and unique.
    """
    if not math.isfinite(S_minus):
        S_minus = -UNBOUNDED_STIELTJES
    lo = S_minus * (1 - 1e-12)
    hi = -1e-12 * max(1.0, abs(S_minus))
    func = lambda s: _z_of_S(density, alpha, s) - z
    flo, fhi = func(lo), func(hi)
    if not (flo <= 0 <= fhi or flo >= 0 >= fhi):
        raise BracketError(
            f"real-branch continuation not bracketed at z = {z} "
            f"(f({lo:.3e}) = {flo:.3e}, f({hi:.3e}) = {fhi:.3e})"
        )
    return float(brentq(func, lo, hi, xtol=1e-14, rtol=1e-14))


# ===== bulk density =====

@dataclass
class BulkSolution:
    alpha: float
    grid: np.ndarray                  # real evaluation points
    stieltjes: np.ndarray             # complex S(lambda + i eps)
    density: np.ndarray               # rho(lambda) >= 0, same length as grid
    left_edge_lambda: float
    left_edge_stieltjes: float

    def mass(self) -> float:
        return float(_trapezoid(self.density, self.grid))

    def cdf(self):
        """Piecewise-linear CDF of the bulk density on the grid."""
        cums = np.concatenate([
            [0.0],
            np.cumsum(0.5 * (self.density[1:] + self.density[:-1])
                      * np.diff(self.grid)),
        ])
        total = cums[-1] if cums[-1] > 0 else 1.0
        grid = self.grid

        def _cdf(x):
            return np.interp(x, grid, cums / total, left=0.0, right=1.0)

        return _cdf

    def write_csv(self, path) -> None:
        import csv

        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda", "rho", "re_S", "im_S"])
            for lam, S, rho in zip(self.grid, self.stieltjes, self.density):
                writer.writerow([f"{lam:.10e}", f"{rho:.10e}",
                                 f"{S.real:.10e}", f"{S.imag:.10e}"])


def bulk_density(
    density: JointLabelDensity,
    alpha: float,
    lambda_grid: np.ndarray,
    epsilon: float | None = None,
) -> BulkSolution:
    """Spectral density on a grid: rho = -(1/pi) Im S(lambda + i eps)."""
    lambda_grid = np.asarray(lambda_grid, dtype=np.float64)
    if lambda_grid.ndim != 1 or len(lambda_grid) < 2:
        raise ValueError("lambda_grid must be a 1-d array with >= 2 points")
    S_minus, lam_minus = left_edge(density, alpha)
    if epsilon is None:
        try:
            _, lam_plus = right_edge(density, alpha)
            scale = max(1.0, abs(lam_minus), abs(lam_plus))
        except StructuralError:
            scale = max(1.0, abs(lam_minus))
        epsilon = 1e-6 * scale
    S_values = np.empty(len(lambda_grid), dtype=np.complex128)
    S_prev = None
    for i, lam in enumerate(lambda_grid):
        z = lam + 1j * epsilon
        S0 = S_prev if S_prev is not None else 1.0 / z
        try:
            S = _fixed_point(density, alpha, z, S0=S0)
        except FixedPointError:
            S = _fixed_point(density, alpha, z, S0=1.0 / z, damping=0.25)
        S_values[i] = S
        S_prev = S
    rho = np.maximum(-S_values.imag / math.pi, 0.0)
    return BulkSolution(
        alpha=alpha, grid=lambda_grid, stieltjes=S_values, density=rho,
        left_edge_lambda=lam_minus, left_edge_stieltjes=S_minus,
    )


# ===== outlier and BBP threshold =====

@dataclass
class OutlierReport:
    exists: bool
    lambda_star: float | None = None
    overlap_sq: float = 0.0
    sigma_at_star: float | None = None


def _sigma(density, alpha: float, z: float, S_minus: float) -> float:
    S = _stieltjes_real_below(density, alpha, z, S_minus)
    return float(alpha * np.real(_e_fy2_over(density, S)))


def outlier(density: JointLabelDensity, alpha: float) -> OutlierReport:
    """Signal outlier below the bulk: the root of z = Sigma(z), z < lambda_-.

    D(z) = z - Sigma(z) is increasing below the bulk, so an outlier exists
    iff D(lambda_-) >= 0; its eigenvector overlap is 1/(1 - Sigma'(lambda*)),
    differentiated numerically with one Richardson refinement.
    """
    S_minus, lam_minus = left_edge(density, alpha)
    D = lambda z: z - _sigma(density, alpha, z, S_minus)
    # evaluate just inside the edge to dodge the square-root singularity
    edge_in = lam_minus - 1e-9 * max(1.0, abs(lam_minus))
    if D(edge_in) < 0:
        return OutlierReport(exists=False)
    span = max(1.0, abs(lam_minus))
    z_lo = lam_minus - 0.5 * span
    for _ in range(60):
        if D(z_lo) < 0:
            break
        z_lo = lam_minus - 2.0 * (lam_minus - z_lo)
    else:
        raise BracketError("outlier root not bracketed below the bulk edge")
    lam_star = float(brentq(D, z_lo, edge_in, xtol=1e-12, rtol=1e-14))
    sigma_star = _sigma(density, alpha, lam_star, S_minus)

    h = 1e-4 * max(lam_minus - lam_star, 1e-9)
    sig = lambda z: _sigma(density, alpha, z, S_minus)
    d1 = (sig(lam_star + h) - sig(lam_star - h)) / (2 * h)
    d2 = (sig(lam_star + h / 2) - sig(lam_star - h / 2)) / h
    dsigma = (4.0 * d2 - d1) / 3.0          # Richardson refinement
    overlap = 1.0 / (1.0 - dsigma)
    return OutlierReport(
        exists=True,
        lambda_star=lam_star,
        overlap_sq=float(min(max(overlap, 0.0), 1.0)),
        sigma_at_star=sigma_star,
    )


def _outlier_exists(density, alpha: float) -> bool:
    """The bisection predicate: detached outlier present at this alpha.

    Below the sampling ratio where the bulk left edge first exists (possible
    at order-one loss offsets), there is no detached outlier regime at all.
    """
    try:
        S_minus, lam_minus = left_edge(density, alpha)
    except StructuralError:
        return False
    edge_in = lam_minus - 1e-9 * max(1.0, abs(lam_minus))
    return (edge_in - _sigma(density, alpha, edge_in, S_minus)) >= 0


def bbp_alpha(
    density: JointLabelDensity,
    bracket: tuple[float, float] = (0.1, 100.0),
    tol: float = 1e-3,
) -> float:
    """Smallest sampling ratio with a detached outlier.

    Bisection on the outlier-existence predicate (expanding the bracket by
    factors of two, at most three times, if needed), then a root polish of
    D(lambda_-(alpha)) in alpha so the returned value satisfies
    lambda_* = lambda_- to near machine precision.
    """
    if isinstance(density, EmpiricalDensity):
        density.require_bbp_precision()
    lo, hi = float(bracket[0]), float(bracket[1])
    for _ in range(3):
        if _outlier_exists(density, hi):
            break
        lo, hi = hi, hi * 2.0
    else:
        if not _outlier_exists(density, hi):
            raise StructuralError(
                f"no outlier up to alpha = {hi}: BBP bracket not found"
            )
    if _outlier_exists(density, lo):
        raise StructuralError(
            f"outlier already present at alpha = {lo}: BBP bracket not found"
        )
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if _outlier_exists(density, mid):
            hi = mid
        else:
            lo = mid

    def edge_gap_in_alpha(alpha: float) -> float:
        try:
            S_minus, lam_minus = left_edge(density, alpha)
        except StructuralError:
            return -1.0
        edge_in = lam_minus - 1e-9 * max(1.0, abs(lam_minus))
        return edge_in - _sigma(density, alpha, edge_in, S_minus)

    # polish: the predicate flips where D(lambda_-) crosses zero
    g_lo, g_hi = edge_gap_in_alpha(lo), edge_gap_in_alpha(hi)
    if g_lo < 0 < g_hi:
        return float(brentq(edge_gap_in_alpha, lo, hi, xtol=1e-10, rtol=1e-12))
    return 0.5 * (lo + hi)


def overlap_curve(
    density: JointLabelDensity, alpha_grid: np.ndarray
) -> list[tuple[float, float]]:
    """(alpha, overlap_sq) along the grid; zero where no outlier exists."""
    alpha_grid = np.asarray(alpha_grid, dtype=np.float64)
    if np.any(np.diff(alpha_grid) < 0):
        raise ValueError("alpha_grid must be sorted ascending")
    out = []
    for alpha in alpha_grid:
        report = outlier(density, float(alpha))
        out.append((float(alpha), report.overlap_sq if report.exists else 0.0))
    return out


def dynamical_bbp(
    trajectory_sampler,
    alpha: float,
    time_grid,
) -> list[tuple[float, float]]:
    """alpha_BBP(t) along a descent, from sampled label densities.

    `trajectory_sampler(t)` must return the pooled empirical density of
    (y, yhat) pairs at time t from constrained runs at sampling ratio alpha.
    The returned curve is monotonically interpolable to extract t_BBP(alpha).
    """
    curve = []
    for t in time_grid:
        density = trajectory_sampler(t)
        if isinstance(density, EmpiricalDensity):
            density.require_bbp_precision()
        curve.append((float(t), float(bbp_alpha(density))))
    return curve


def crossing_time(curve: list[tuple[float, float]], alpha: float) -> float | None:
    """First time at which an alpha_BBP(t) curve crosses the given ratio."""
    for (t0, a0), (t1, a1) in zip(curve[:-1], curve[1:]):
        if (a0 - alpha) * (a1 - alpha) <= 0 and a0 != a1:
            return float(t0 + (alpha - a0) * (t1 - t0) / (a1 - a0))
    return None
