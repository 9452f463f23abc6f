"""Spherical gradient descent on the phase-retrieval loss.

Implements the discrete update

    w(t+1) = w(t) - eta * grad L + eta * mu(t) * w(t),    mu = (w . grad L) / N,

with optional exact renormalization onto the sphere ||w|| = sqrt(N) each step,
three initialization schemes (random, spectral, constrained), and trajectory
recording of the magnetization m(t) = (w . w*) / N and per-variable loss.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, asdict
from typing import Callable

import numpy as np

from .model import Instance, LossSpec, dloss_dyhat, loss_pair

DEFAULT_ETA = 2e-4
STEPS_PER_LOG2N = 12000       # default trajectory length T = 12000 * log2(N)
DEFAULT_TC = 60000            # constrained-initialization step budget
RECOVERY_THRESHOLD = 0.99     # strong recovery: |m(T)| >= 0.99
DENSE_RECORD_STEPS = 1000     # record every step this early to resolve the escape


def default_steps(N: int) -> int:
    return int(round(STEPS_PER_LOG2N * math.log2(N)))


@dataclass(frozen=True)
class TrajectoryConfig:
    eta: float = DEFAULT_ETA
    steps: int | None = None            # None: use default_steps(N)
    record_every: int = 100
    snapshot_times: tuple[int, ...] = ()
    init: str = "random"                # random | spectral | constrained
    t_c: int = DEFAULT_TC               # constrained-init step budget
    renormalize: bool = True
    early_exit_loss: float | None = None  # stop when L/N drops below this
    dtype: str = "float64"              # float32 speeds up large sweeps

    def __post_init__(self) -> None:
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.steps is not None and self.steps < 1:
            raise ValueError("steps must be positive")
        if self.record_every < 1:
            raise ValueError("record_every must be positive")
        if self.init not in ("random", "spectral", "constrained"):
            raise ValueError(f"unknown init scheme {self.init!r}")
        if self.t_c < 1:
            raise ValueError("t_c must be positive")


@dataclass
class TrajectoryRecord:
    times: np.ndarray           # recorded step indices
    magnetization: np.ndarray   # m(t) at those steps
    loss: np.ndarray            # L(t)/N at those steps
    snapshots: list[tuple[int, np.ndarray]]
    final_state: np.ndarray
    recovered: bool
    valid: bool = True          # False when the run aborted on overflow
    config: dict = field(default_factory=dict)

    @property
    def final_magnetization(self) -> float:
        return float(self.magnetization[-1])


def magnetization(inst: Instance, w: np.ndarray) -> float:
    """m = (w . w*) / N."""
    w = np.asarray(w)
    if w.shape != (inst.N,):
        raise ValueError(f"w has shape {w.shape}, expected ({inst.N},)")
    return float(w @ inst.signal) / inst.N


def _rescale_to_sphere(w: np.ndarray, N: int) -> np.ndarray:
    return w * (np.sqrt(N) / np.linalg.norm(w))


def gd_step(
    spec: LossSpec,
    inst: Instance,
    w: np.ndarray,
    eta: float = DEFAULT_ETA,
    renormalize: bool = True,
) -> np.ndarray:
    """One update of Eq. above; raises on non-finite gradient entries."""
    from .model import gradient

    nrm = np.linalg.norm(w)
    if abs(nrm - np.sqrt(inst.N)) > 1e-6 * np.sqrt(inst.N):
        raise ValueError(f"state off the sphere: ||w|| = {nrm:.6g}")
    g = gradient(spec, inst, w)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient in gd_step")
    mu = float(w @ g) / inst.N
    out = w - eta * g + eta * mu * w
    if renormalize:
        out = _rescale_to_sphere(out, inst.N)
    return out


# ===== initialization schemes =====

def init_random(N: int, seed: int) -> np.ndarray:
    """Gaussian direction rescaled to the sphere ||w|| = sqrt(N)."""
    if N < 2:
        raise ValueError("N must be >= 2")
    rng = np.random.default_rng(seed)
    return _rescale_to_sphere(rng.standard_normal(N), N)


def init_spectral(spec: LossSpec, inst: Instance, seed: int) -> np.ndarray:
    """Bottom Hessian eigenvector at a fresh random state, on the sphere.

    The eigenvector sign is fixed by nonnegative overlap with the random
    reference state; the global sign symmetry makes the choice immaterial
    for recovery statistics.
    """
    from .spectrum import extreme_eigenpair

    w_ref = init_random(inst.N, seed)
    _, v = extreme_eigenpair(spec, inst, w_ref, which="smallest")
    if float(v @ w_ref) < 0:
        v = -v
    return _rescale_to_sphere(v, inst.N)


def init_constrained(
    spec: LossSpec,
    inst: Instance,
    t_c: int = DEFAULT_TC,
    eta: float = DEFAULT_ETA,
    seed: int = 0,
    dtype: str = "float64",
) -> np.ndarray:
    """Descend t_c steps while projecting out the signal direction each step.

    Each update is followed by the projection (I - w* w*^T / N) and exact
    rescaling to the sphere, landing on a zero-magnetization loss plateau
    (the operational threshold-state proxy).
    """
    if t_c < 1:
        raise ValueError("t_c must be >= 1")
    runner = _FastRunner(spec, inst, eta=eta, dtype=dtype, project_out_signal=True)
    w0 = init_random(inst.N, seed)
    w0 -= (w0 @ inst.signal) / inst.N * inst.signal
    w0 = _rescale_to_sphere(w0, inst.N)
    w = runner.run(w0, t_c)
    w = w.astype(np.float64)
    w -= (w @ inst.signal) / inst.N * inst.signal
    return _rescale_to_sphere(w, inst.N)


# ===== trajectory engine =====

class _FastRunner:
    """Hot loop over sensing-matrix products, optionally in float32.

    Keeps casts out of the per-step path; the public API returns float64.
    """

    def __init__(
        self,
        spec: LossSpec,
        inst: Instance,
        eta: float,
        dtype: str = "float64",
        renormalize: bool = True,
        project_out_signal: bool = False,
    ):
        dt = np.dtype(dtype)
        self.X = inst.sensing.astype(dt, copy=False)
        self.y2 = (inst.labels.astype(dt) ** 2)
        self.denom_inv = (1.0 / (spec.a + self.y2)).astype(dt)
        self.signal = inst.signal.astype(dt)
        self.N = inst.N
        self.sqrtN = dt.type(np.sqrt(inst.N))
        self.eta = dt.type(eta)
        self.renormalize = renormalize
        self.project = project_out_signal
        self.dt = dt

    def loss_and_grad(self, w):
        """Returns (L/N, grad L) at w; one forward and one transposed product."""
        yhat = self.X @ w
        diff = self.y2 - yhat**2
        per = diff**2 * self.denom_inv
        lossN = float(np.sum(per)) * 0.5 / self.N
        coeff = (-2.0) * yhat * diff * self.denom_inv   # 0.5 * dl/dyhat
        g = coeff @ self.X
        return lossN, g

    def update(self, w, g):
        """Apply one descent update given the gradient at w."""
        mu = (w @ g) / self.N
        w = w - self.eta * g + (self.eta * mu) * w
        if self.project:
            w = w - ((w @ self.signal) / self.N) * self.signal
        if self.renormalize:
            w = w * (self.sqrtN / np.linalg.norm(w))
        return w

    def run(self, w0, steps):
        w = w0.astype(self.dt)
        for _ in range(steps):
            _, g = self.loss_and_grad(w)
            w = self.update(w, g)
        return w


def make_initial_state(
    spec: LossSpec, inst: Instance, config: TrajectoryConfig, seed: int
) -> np.ndarray:
    if config.init == "random":
        return init_random(inst.N, seed)
    if config.init == "spectral":
        return init_spectral(spec, inst, seed)
    return init_constrained(
        spec, inst, t_c=config.t_c, eta=config.eta, seed=seed, dtype=config.dtype
    )


def run_trajectory(
    spec: LossSpec,
    inst: Instance,
    config: TrajectoryConfig,
    seed: int = 0,
    w0: np.ndarray | None = None,
    progress: Callable[[int, float, float], None] | None = None,
) -> TrajectoryRecord:
    """Iterate gd_step for the configured number of steps, recording m and L/N.

    Recording is dense (every step) for the first DENSE_RECORD_STEPS steps,
    then every `record_every`; estimator snapshots are taken at the requested
    step indices. `recovered` reflects |m| >= 0.99 at the final recorded step.
    """
    steps = config.steps if config.steps is not None else default_steps(inst.N)
    w = make_initial_state(spec, inst, config, seed) if w0 is None else np.array(w0, dtype=np.float64)
    runner = _FastRunner(
        spec, inst, eta=config.eta, dtype=config.dtype, renormalize=config.renormalize
    )
    snapshot_set = set(int(t) for t in config.snapshot_times)

    times: list[int] = []
    mags: list[float] = []
    losses: list[float] = []
    snapshots: list[tuple[int, np.ndarray]] = []
    valid = True

    wd = w.astype(runner.dt)

    def record(t: int, lossN: float) -> None:
        times.append(t)
        mags.append(float(wd @ runner.signal) / inst.N)
        losses.append(lossN)

    lossN, g = runner.loss_and_grad(wd)
    record(0, lossN)
    if 0 in snapshot_set:
        snapshots.append((0, wd.astype(np.float64).copy()))

    t = 0
    try:
        while t < steps:
            wd = runner.update(wd, g)
            t += 1
            lossN, g = runner.loss_and_grad(wd)
            if t <= DENSE_RECORD_STEPS or t % config.record_every == 0 or t == steps:
                record(t, lossN)
            if t in snapshot_set:
                snapshots.append((t, wd.astype(np.float64).copy()))
            if not np.isfinite(lossN):
                raise FloatingPointError(f"loss overflow at step {t}")
            if progress is not None and t % 10000 == 0:
                progress(t, float(wd @ runner.signal) / inst.N, lossN)
            if config.early_exit_loss is not None and lossN < config.early_exit_loss:
                if times[-1] != t:
                    record(t, lossN)
                break
    except FloatingPointError:
        valid = False

    final = wd.astype(np.float64)
    rec = TrajectoryRecord(
        times=np.asarray(times, dtype=np.int64),
        magnetization=np.asarray(mags),
        loss=np.asarray(losses),
        snapshots=snapshots,
        final_state=final,
        recovered=valid and abs(mags[-1]) >= RECOVERY_THRESHOLD,
        valid=valid,
        config={**asdict(config), "seed": seed, "N": inst.N, "alpha": inst.alpha},
    )
    return rec


def save_record(rec: TrajectoryRecord, path) -> None:
    """Columnar (step, m, loss) plus the config manifest, in one .npz."""
    np.savez_compressed(
        path,
        times=rec.times,
        magnetization=rec.magnetization,
        loss=rec.loss,
        final_state=rec.final_state,
        recovered=rec.recovered,
        valid=rec.valid,
        config=np.array(repr(rec.config)),
    )
