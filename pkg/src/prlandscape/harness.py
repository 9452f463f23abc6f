"""Experiment orchestration: seeded recovery sweeps, threshold-state sampling,
crossing extraction, finite-size extrapolation, and report emission.

Sweeps are resumable: every completed (N, alpha, seed) cell is appended to a
JSON-lines ledger in the sweep directory and skipped on re-run, and the cell
to seed mapping is a pure function of (root_seed, N, alpha, seed index), so an
interrupted sweep finishes to the same table as an uninterrupted one.
"""
from __future__ import annotations

import csv
import json
import math
import os
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import __version__ as PKG_VERSION
from .model import RNG_ID, Instance, LossSpec, generate_instance
from .dynamics import (
    DEFAULT_ETA,
    DEFAULT_TC,
    TrajectoryConfig,
    _FastRunner,
    default_steps,
    init_random,
    run_trajectory,
)

DEFAULT_ROOT_SEED = 20260401


# ===== seeding and manifests =====

def cell_seeds(root_seed: int, N: int, alpha: float, seed_index: int) -> tuple[int, int]:
    """Deterministic (instance_seed, init_seed) for one sweep cell."""
    ss = np.random.SeedSequence([root_seed, N, int(round(alpha * 1e6)), seed_index])
    a, b = ss.generate_state(2)
    return int(a), int(b)


def _alpha_key(alpha: float) -> str:
    return f"{alpha:.6f}"


def write_manifest(directory: Path, payload: dict) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    payload = dict(payload)
    payload.setdefault("rng_id", RNG_ID)
    payload.setdefault("package_version", PKG_VERSION)
    payload.setdefault("numpy_version", np.__version__)
    tmp = directory / "manifest.json.tmp"
    tmp.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))
    tmp.replace(directory / "manifest.json")


# ===== recovery sweeps =====

@dataclass(frozen=True)
class SweepSpec:
    loss_a: float
    N_list: tuple[int, ...]
    alpha_grid: tuple[float, ...]
    seeds_per_cell: int = 20
    init: str = "random"                  # random | spectral | constrained
    eta: float = DEFAULT_ETA
    steps_rule: str = "12000*log2(N)"     # or "fixed:<steps>"
    output_dir: str = "sweep_out"
    t_c: int = DEFAULT_TC
    root_seed: int = DEFAULT_ROOT_SEED
    dtype: str = "float32"                # recovery tallies tolerate f32
    # stop once the loss is unambiguously at the recovered fixed point: well
    # below any plateau, above the float32 rounding floor (~2.5e-9)
    early_exit_loss: float | None = 1e-8

    def __post_init__(self) -> None:
        if self.seeds_per_cell < 1:
            raise ValueError("seeds_per_cell must be >= 1")
        if not self.N_list or not self.alpha_grid:
            raise ValueError("N_list and alpha_grid must be non-empty")
        if list(self.alpha_grid) != sorted(self.alpha_grid):
            raise ValueError("alpha_grid must be sorted")
        if list(self.N_list) != sorted(self.N_list):
            raise ValueError("N_list must be sorted")

    def steps_for(self, N: int) -> int:
        rule = self.steps_rule.strip()
        if rule.startswith("fixed:"):
            return int(rule.split(":", 1)[1])
        if rule == "12000*log2(N)":
            return default_steps(N)
        raise ValueError(f"unknown steps rule {rule!r}")


@dataclass
class RecoveryRow:
    N: int
    alpha: float
    successes: int
    trials: int
    rate: float
    ci_low: float
    ci_high: float


@dataclass
class RecoveryTable:
    rows: list[RecoveryRow] = field(default_factory=list)

    def for_N(self, N: int) -> list[RecoveryRow]:
        return sorted((r for r in self.rows if r.N == N), key=lambda r: r.alpha)

    def N_values(self) -> list[int]:
        return sorted({r.N for r in self.rows})

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["N", "alpha", "successes", "trials", "rate", "ci_low", "ci_high"])
            for r in sorted(self.rows, key=lambda r: (r.N, r.alpha)):
                writer.writerow([r.N, f"{r.alpha:.6f}", r.successes, r.trials,
                                 f"{r.rate:.6f}", f"{r.ci_low:.6f}", f"{r.ci_high:.6f}"])

    @classmethod
    def read_csv(cls, path) -> "RecoveryTable":
        rows = []
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                rows.append(RecoveryRow(
                    N=int(rec["N"]), alpha=float(rec["alpha"]),
                    successes=int(rec["successes"]), trials=int(rec["trials"]),
                    rate=float(rec["rate"]), ci_low=float(rec["ci_low"]),
                    ci_high=float(rec["ci_high"]),
                ))
        return cls(rows=rows)


def wilson_interval(successes: int, trials: int, z: float = 1.959964) -> tuple[float, float]:
    """95% Wilson score interval for a binomial proportion."""
    if trials == 0:
        return 0.0, 1.0
    p = successes / trials
    denom = 1 + z**2 / trials
    center = (p + z**2 / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z**2 / (4 * trials**2)) / denom
    return max(0.0, center - half), min(1.0, center + half)


def _cells_path(out: Path) -> Path:
    return out / "cells.jsonl"


def _load_completed(out: Path) -> dict[tuple[int, str, int], dict]:
    done: dict[tuple[int, str, int], dict] = {}
    path = _cells_path(out)
    if path.exists():
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                done[(rec["N"], rec["alpha_key"], rec["seed_index"])] = rec
    return done


def _run_cell(spec: SweepSpec, N: int, alpha: float, seed_index: int) -> dict:
    inst_seed, init_seed = cell_seeds(spec.root_seed, N, alpha, seed_index)
    loss_spec = LossSpec(spec.loss_a)
    inst = generate_instance(N, alpha, inst_seed)
    config = TrajectoryConfig(
        eta=spec.eta,
        steps=spec.steps_for(N),
        init=spec.init,
        t_c=spec.t_c,
        dtype=spec.dtype,
        early_exit_loss=spec.early_exit_loss,
        record_every=1000,
    )
    t0 = time.perf_counter()
    rec = run_trajectory(loss_spec, inst, config, seed=init_seed)
    return {
        "N": N,
        "alpha": alpha,
        "alpha_key": _alpha_key(alpha),
        "seed_index": seed_index,
        "instance_seed": inst_seed,
        "init_seed": init_seed,
        "recovered": bool(rec.recovered),
        "valid": bool(rec.valid),
        "final_m": float(rec.magnetization[-1]),
        "final_loss": float(rec.loss[-1]),
        "steps_run": int(rec.times[-1]),
        "wall_s": round(time.perf_counter() - t0, 3),
    }


def run_sweep(spec: SweepSpec, progress: bool = True) -> RecoveryTable:
    """Run (or resume) the sweep and return its aggregated recovery table."""
    out = Path(spec.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_manifest(out, {"kind": "recovery_sweep", "spec": asdict(spec)})
    done = _load_completed(out)

    cells = [
        (N, alpha, k)
        for N in spec.N_list
        for alpha in spec.alpha_grid
        for k in range(spec.seeds_per_cell)
    ]
    pending = [c for c in cells if (c[0], _alpha_key(c[1]), c[2]) not in done]
    if progress and pending:
        print(f"[sweep {out.name}] {len(pending)}/{len(cells)} cells to run", flush=True)

    with open(_cells_path(out), "a") as ledger:
        for N, alpha, k in pending:
            try:
                rec = _run_cell(spec, N, alpha, k)
            except Exception as err:  # cell failures recorded, sweep continues
                rec = {
                    "N": N, "alpha": alpha, "alpha_key": _alpha_key(alpha),
                    "seed_index": k, "recovered": False, "valid": False,
                    "error": f"{type(err).__name__}: {err}",
                }
            ledger.write(json.dumps(rec) + "\n")
            ledger.flush()
            done[(N, rec["alpha_key"], k)] = rec
            if progress:
                print(
                    f"[sweep {out.name}] N={N} alpha={alpha:.3f} seed={k} "
                    f"recovered={rec['recovered']} ({rec.get('wall_s', float('nan'))}s)",
                    flush=True,
                )

    table = aggregate_table(spec, done)
    table.write_csv(out / "recovery.csv")
    return table


def aggregate_table(spec: SweepSpec, done: dict) -> RecoveryTable:
    rows = []
    for N in spec.N_list:
        for alpha in spec.alpha_grid:
            cells = [
                done[(N, _alpha_key(alpha), k)]
                for k in range(spec.seeds_per_cell)
                if (N, _alpha_key(alpha), k) in done
            ]
            trials = len(cells)
            if trials == 0:
                continue
            successes = sum(1 for c in cells if c.get("recovered"))
            lo, hi = wilson_interval(successes, trials)
            rows.append(RecoveryRow(
                N=N, alpha=alpha, successes=successes, trials=trials,
                rate=successes / trials, ci_low=lo, ci_high=hi,
            ))
    return RecoveryTable(rows=rows)


def constrained_sweep(spec: SweepSpec, progress: bool = True) -> RecoveryTable:
    """Sweep whose every trajectory starts from a constrained initialization."""
    if spec.init != "constrained":
        raise ValueError("constrained_sweep requires spec.init == 'constrained'")
    return run_sweep(spec, progress=progress)


# ===== crossings and scaling fits =====

def isotonic_fit(values: np.ndarray) -> np.ndarray:
    """Nondecreasing least-squares fit by pool-adjacent-violators."""
    values = np.asarray(values, dtype=float)
    level = values.copy()
    weight = np.ones_like(level)
    blocks = list(range(len(level)))
    i = 0
    while i < len(level) - 1:
        if level[i] > level[i + 1] + 1e-15:
            merged = (level[i] * weight[i] + level[i + 1] * weight[i + 1]) / (
                weight[i] + weight[i + 1]
            )
            weight[i] += weight[i + 1]
            level[i] = merged
            level = np.delete(level, i + 1)
            weight = np.delete(weight, i + 1)
            blocks[i + 1 :] = blocks[i + 2 :] if i + 2 <= len(blocks) else []
            i = max(i - 1, 0)
        else:
            i += 1
    # expand blocks back to the original grid
    out = []
    for lv, wt in zip(level, weight):
        out.extend([lv] * int(round(wt)))
    return np.asarray(out)


def crossing_alpha(
    table: RecoveryTable, N: int, level: float = 0.5
) -> float | None:
    """alpha at which the isotonic-regressed recovery curve crosses `level`."""
    rows = table.for_N(N)
    if len(rows) < 2:
        return None
    alphas = np.array([r.alpha for r in rows])
    rates = isotonic_fit(np.array([r.rate for r in rows]))
    if rates[0] > level or rates[-1] < level:
        return None
    idx = int(np.searchsorted(rates, level, side="left"))
    if idx == 0:
        return float(alphas[0])
    a0, a1 = alphas[idx - 1], alphas[idx]
    r0, r1 = rates[idx - 1], rates[idx]
    if r1 == r0:
        return float(0.5 * (a0 + a1))
    return float(a0 + (level - r0) * (a1 - a0) / (r1 - r0))


@dataclass
class ExtrapolationFit:
    alpha_infinity: float
    coefficient: float          # c in alpha(N) = alpha_inf + c / N
    r_squared: float
    residuals: np.ndarray


def finite_size_extrapolate(values: list[tuple[int, float]]) -> ExtrapolationFit:
    """Least-squares fit alpha(N) = alpha_inf + c/N over >= 3 distinct N."""
    if len({N for N, _ in values}) < 3:
        raise ValueError("need at least 3 distinct N for extrapolation")
    N = np.array([float(n) for n, _ in values])
    a = np.array([v for _, v in values])
    x = 1.0 / N
    coeffs, residuals_info = np.polyfit(x, a, 1), None
    pred = np.polyval(coeffs, x)
    resid = a - pred
    ss_res = float(np.sum(resid**2))
    ss_tot = float(np.sum((a - a.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return ExtrapolationFit(
        alpha_infinity=float(coeffs[1]),
        coefficient=float(coeffs[0]),
        r_squared=r2,
        residuals=resid,
    )


@dataclass
class LogScalingRow:
    level: float
    N: int
    alpha_at_level: float


@dataclass
class LogScalingFit:
    level: float
    slope: float                # d alpha / d log2 N
    intercept: float
    r_squared: float


def log_scaling_study(
    table: RecoveryTable, rate_levels: tuple[float, ...] = (0.25, 0.5, 0.75)
) -> tuple[list[LogScalingRow], list[LogScalingFit]]:
    """Inverse-interpolate each recovery curve at the given levels and fit
    alpha_at_level against log2 N per level."""
    rows: list[LogScalingRow] = []
    fits: list[LogScalingFit] = []
    for level in rate_levels:
        pts = []
        for N in table.N_values():
            a = crossing_alpha(table, N, level)
            if a is not None:
                pts.append((N, a))
                rows.append(LogScalingRow(level=level, N=N, alpha_at_level=a))
        if len(pts) >= 2:
            x = np.log2([p[0] for p in pts])
            y = np.array([p[1] for p in pts])
            slope, intercept = np.polyfit(x, y, 1)
            pred = slope * x + intercept
            ss_res = float(np.sum((y - pred) ** 2))
            ss_tot = float(np.sum((y - y.mean()) ** 2))
            r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
            fits.append(LogScalingFit(level=level, slope=float(slope),
                                      intercept=float(intercept), r_squared=r2))
    return rows, fits


# ===== threshold-state sampling =====

@dataclass
class ThresholdSamplePool:
    loss_a: float
    alpha: float
    N: int
    time_tag: str               # step index as string, or "plateau" (= t_c)
    pairs: np.ndarray           # (n, 2) columns (y, yhat)
    provenance: list[dict] = field(default_factory=list)

    @property
    def size(self) -> int:
        return int(self.pairs.shape[0])


def sample_threshold_pool(
    loss_a: float,
    alpha: float,
    N: int,
    times: tuple,
    seeds: int,
    eta: float = DEFAULT_ETA,
    t_c: int = DEFAULT_TC,
    output_dir: str | None = None,
    root_seed: int = DEFAULT_ROOT_SEED,
    dtype: str = "float32",
    progress: bool = True,
) -> dict[str, ThresholdSamplePool]:
    """Constrained runs snapshotting (y_i, yhat_i) pairs at requested times.

    `times` entries are step indices or the string "plateau" (meaning t_c).
    Pools are accumulated across seeds; per-seed snapshot files make the
    sampling resumable.
    """
    spec = LossSpec(loss_a)
    tags = [(t_c if t == "plateau" else int(t)) for t in times]
    labels = [("plateau" if t == "plateau" else str(int(t))) for t in times]
    if any(t < 0 or t > t_c for t in tags):
        raise ValueError("snapshot times must lie in [0, t_c]")
    out = Path(output_dir) if output_dir else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(out, {
            "kind": "threshold_pool", "loss_a": loss_a, "alpha": alpha, "N": N,
            "times": labels, "seeds": seeds, "eta": eta, "t_c": t_c,
            "root_seed": root_seed, "dtype": dtype,
        })

    per_time: dict[str, list[np.ndarray]] = {lab: [] for lab in labels}
    provenance: list[dict] = []
    for k in range(seeds):
        inst_seed, init_seed = cell_seeds(root_seed, N, alpha, k)
        cache = out / f"seed{k:04d}.npz" if out is not None else None
        if cache is not None and cache.exists():
            with np.load(cache) as data:
                y = data["y"]
                for lab in labels:
                    per_time[lab].append(np.column_stack([y, data[f"yhat_{lab}"]]))
            provenance.append({"seed_index": k, "instance_seed": inst_seed,
                               "init_seed": init_seed, "cached": True})
            continue
        inst = generate_instance(N, alpha, inst_seed)
        runner = _FastRunner(spec, inst, eta=eta, dtype=dtype, project_out_signal=True)
        w0 = init_random(N, init_seed)
        w0 -= (w0 @ inst.signal) / N * inst.signal
        w0 *= np.sqrt(N) / np.linalg.norm(w0)
        w = w0.astype(runner.dt)
        snaps: dict[str, np.ndarray] = {}
        stop_at = max(tags)
        for label, tag in zip(labels, tags):
            if tag == 0:
                snaps[label] = np.asarray(runner.X @ w, dtype=np.float64)
        t0 = time.perf_counter()
        for t in range(1, stop_at + 1):
            _, g = runner.loss_and_grad(w)
            w = runner.update(w, g)
            for label, tag in zip(labels, tags):
                if tag == t:
                    snaps[label] = np.asarray(runner.X @ w, dtype=np.float64)
        y = inst.labels.copy()
        for lab in labels:
            per_time[lab].append(np.column_stack([y, snaps[lab]]))
        if cache is not None:
            np.savez_compressed(
                cache, y=y, **{f"yhat_{lab}": snaps[lab] for lab in labels}
            )
        provenance.append({"seed_index": k, "instance_seed": inst_seed,
                           "init_seed": init_seed, "cached": False,
                           "wall_s": round(time.perf_counter() - t0, 2)})
        if progress:
            print(f"[pool N={N} alpha={alpha:.3f}] seed {k + 1}/{seeds} done", flush=True)

    return {
        lab: ThresholdSamplePool(
            loss_a=loss_a, alpha=alpha, N=N, time_tag=lab,
            pairs=np.concatenate(per_time[lab], axis=0),
            provenance=provenance,
        )
        for lab in labels
    }


# ===== reports =====

PLATEAU_BAND_FACTOR = 3.0      # max loss drift ratio inside a plateau window
PLATEAU_MIN_FRACTION = 0.2     # plateau must span this fraction of the run
PLATEAU_START_FRACTION = 0.3   # ... and begin no later than this fraction
_PROFILE_GRID = 512


def two_phase_profile(rec) -> bool:
    """Fast drop to an extended intermediate plateau, then final collapse.

    The curve is rebinned onto a uniform time grid first: recording is dense
    over the earliest steps, so index-based statistics would overweight them.
    A plateau is a window spanning at least PLATEAU_MIN_FRACTION of the run
    that starts by PLATEAU_START_FRACTION, drifts by no more than a factor
    PLATEAU_BAND_FACTOR, and sits well below the starting loss while staying
    well above the final one.
    """
    loss = np.asarray(rec.loss, dtype=float)
    times = np.asarray(rec.times, dtype=float)
    if len(loss) < 10 or loss[-1] >= 1e-6 or np.any(loss <= 0):
        return False
    grid = np.linspace(times[0], times[-1], _PROFILE_GRID)
    logl = np.log(np.interp(grid, times, loss))
    width = math.ceil(PLATEAU_MIN_FRACTION * _PROFILE_GRID)
    last_start = int(PLATEAU_START_FRACTION * _PROFILE_GRID)
    windows = np.lib.stride_tricks.sliding_window_view(logl, width)[: last_start + 1]
    flat = windows.max(axis=1) - windows.min(axis=1) <= math.log(PLATEAU_BAND_FACTOR)
    if not flat.any():
        return False
    levels = np.exp(np.median(windows[flat], axis=1))
    intermediate = (levels < 0.5 * loss[0]) & (levels > 1e3 * loss[-1])
    return bool(intermediate.any())


def spectral_evolution_report(
    loss_a: float,
    alpha: float,
    N: int,
    seed: int,
    snapshot_times: tuple[int, ...],
    output_dir: str,
    eta: float = DEFAULT_ETA,
    steps: int | None = None,
    dtype: str = "float32",
    root_seed: int = DEFAULT_ROOT_SEED,
) -> dict:
    """One trajectory with full spectra at snapshots, plots, and CSV export."""
    from .spectrum import full_spectrum, empirical_density

    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    inst_seed, init_seed = cell_seeds(root_seed, N, alpha, seed)
    spec = LossSpec(loss_a)
    inst = generate_instance(N, alpha, inst_seed)
    config = TrajectoryConfig(
        eta=eta, steps=steps, snapshot_times=tuple(snapshot_times),
        dtype=dtype, record_every=100,
    )
    rec = run_trajectory(spec, inst, config, seed=init_seed)

    with open(out / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "magnetization", "loss_per_variable"])
        for t, m, l in zip(rec.times, rec.magnetization, rec.loss):
            writer.writerow([int(t), f"{m:.8f}", f"{l:.10e}"])

    snapshots_summary = []
    for t, w in rec.snapshots:
        report = full_spectrum(spec, inst, w)
        hist = empirical_density(report.eigenvalues, bins=80)
        with open(out / f"spectrum_t{t}.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["lambda"])
            for lam in report.eigenvalues:
                writer.writerow([f"{lam:.10e}"])
        snapshots_summary.append({
            "step": int(t),
            "lambda_min": report.lambda_min,
            "outlier_detached": bool(report.outlier_detached),
            "signal_overlap_sq": report.signal_overlap_sq,
            "mu_shift": report.mu_shift,
            "bulk_left_estimate": report.bulk_left_estimate,
        })
        _plot_spectrum_snapshot(out, t, hist, report, spec, inst)

    _plot_trajectory(out, rec)
    summary = {
        "recovered": bool(rec.recovered),
        "final_magnetization": float(rec.magnetization[-1]),
        "final_loss": float(rec.loss[-1]),
        "two_phase_profile": two_phase_profile(rec),
        "snapshots": snapshots_summary,
    }
    write_manifest(out, {
        "kind": "spectral_evolution_report", "loss_a": loss_a, "alpha": alpha,
        "N": N, "seed": seed, "snapshot_times": list(snapshot_times),
        "eta": eta, "root_seed": root_seed, "summary": summary,
    })
    (out / "summary.json").write_text(json.dumps(summary, indent=2))
    return summary


def _plot_trajectory(out: Path, rec) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, (ax1, ax2) = plt.subplots(2, 1, figsize=(6, 6), sharex=True)
    ax1.semilogy(rec.times, np.maximum(rec.loss, 1e-300))
    ax1.set_ylabel("loss per variable")
    ax2.plot(rec.times, np.abs(rec.magnetization))
    ax2.set_ylabel("|m(t)|")
    ax2.set_xlabel("step")
    fig.tight_layout()
    fig.savefig(out / "trajectory.svg")
    plt.close(fig)


def _plot_spectrum_snapshot(out: Path, t: int, hist, report, spec, inst) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    ax.bar(hist.centers, hist.density, width=np.diff(hist.edges), alpha=0.6,
           label=f"empirical (N={inst.N})")
    ax.axvline(report.lambda_min, color="tab:red", ls="--", lw=1,
               label=f"$\\lambda_1$ = {report.lambda_min:.2f}")
    ax.set_xlabel("$\\lambda$")
    ax.set_ylabel("$\\rho(\\lambda)$")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / f"spectrum_t{t}.svg")
    plt.close(fig)
