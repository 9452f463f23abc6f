"""Command-line interface for simulation, spectral analysis, and reporting.

Every subcommand accepts ``--config FILE`` (TOML; keys live in a table named
after the subcommand, dashes replaced by underscores) plus flag overrides, and
writes its outputs under ``--out`` with a manifest recording the effective
configuration, its hash, and library versions.

Exit codes:
  0  success
  2  usage error (unknown flags or bad values; raised by the argument parser)
  3  config file not found
  4  malformed config file
  5  missing or insufficient input (run directory, pool file, pool too small)
  6  computation failed (non-convergence or structural error)
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                   # Python 3.10
    import tomli as tomllib

from .model import LossSpec, generate_instance
from .dynamics import TrajectoryConfig, run_trajectory
from .rmt import (
    AnalyticInitDensity,
    BracketError,
    EmpiricalDensity,
    FixedPointError,
    PrecisionError,
    StructuralError,
    bbp_alpha,
    bulk_density,
    crossing_time,
    left_edge,
    outlier,
)
from . import replica
from .harness import (
    RecoveryRow,
    RecoveryTable,
    SweepSpec,
    cell_seeds,
    run_sweep,
    sample_threshold_pool,
    spectral_evolution_report,
    wilson_interval,
    write_manifest,
)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_CONFIG_NOT_FOUND = 3
EXIT_CONFIG_MALFORMED = 4
EXIT_MISSING_INPUT = 5
EXIT_COMPUTATION = 6


class CliError(Exception):
    def __init__(self, code: int, kind: str, detail: str):
        super().__init__(detail)
        self.code = code
        self.kind = kind
        self.detail = detail


def _fail(code: int, kind: str, detail: str) -> CliError:
    return CliError(code, kind, detail)


def _load_config(path: str | None, section: str) -> dict:
    if path is None:
        return {}
    p = Path(path)
    if not p.exists():
        raise _fail(EXIT_CONFIG_NOT_FOUND, "config-not-found", str(p))
    try:
        data = tomllib.loads(p.read_text())
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as err:
        raise _fail(EXIT_CONFIG_MALFORMED, "config-malformed", f"{p}: {err}")
    merged = {k: v for k, v in data.items() if not isinstance(v, dict)}
    merged.update(data.get(section, {}))
    return merged


def _effective(args: argparse.Namespace, config: dict, defaults: dict) -> dict:
    """defaults < config < explicitly passed flags."""
    out = dict(defaults)
    out.update({k: v for k, v in config.items() if k in defaults})
    for key in defaults:
        value = getattr(args, key, None)
        if value is not None:
            out[key] = value
    return out


def _config_hash(params: dict) -> str:
    blob = json.dumps(params, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def _out_dir(params: dict, command: str) -> Path:
    out = Path(params.get("out") or f"prland_out/{command}")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _emit_manifest(out: Path, command: str, params: dict, t0: float,
                   extra: dict | None = None) -> None:
    payload = {
        "kind": f"cli_{command.replace('-', '_')}",
        "command": command,
        "params": params,
        "config_hash": _config_hash(params),
        "argv": sys.argv[1:],
        "wall_s": round(time.perf_counter() - t0, 3),
    }
    if extra:
        payload.update(extra)
    write_manifest(out, payload)


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=str))


# ===== density sources shared by bbp / rmt-density =====

def _pool_pairs(path: str) -> np.ndarray:
    p = Path(path)
    if not p.exists():
        raise _fail(EXIT_MISSING_INPUT, "missing-input", f"pool file {p} not found")
    with np.load(p) as data:
        if "pairs" in data:
            return np.asarray(data["pairs"], dtype=np.float64)
        if "y" in data and "yhat" in data:
            return np.column_stack([data["y"], data["yhat"]]).astype(np.float64)
    raise _fail(EXIT_MISSING_INPUT, "missing-input",
                f"pool file {p} carries neither 'pairs' nor ('y', 'yhat')")


def _make_density(params: dict):
    kind = params["density"]
    if kind == "analytic-init":
        return AnalyticInitDensity(params["a"])
    if kind == "pool":
        if not params.get("pool"):
            raise _fail(EXIT_MISSING_INPUT, "missing-input",
                        "--density pool requires --pool FILE")
        return EmpiricalDensity(params["a"], _pool_pairs(params["pool"]))
    raise _fail(EXIT_USAGE, "usage", f"unknown density source {kind!r}")


# ===== subcommands =====

def _cmd_simulate(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(a=0.01, alpha=3.1, N=512, seed=0, init="random",
                    eta=2e-4, steps=0, out=None)
    params = _effective(args, _load_config(args.config, "simulate"), defaults)
    out = _out_dir(params, "simulate")
    spec = LossSpec(params["a"])
    inst_seed, init_seed = cell_seeds(20260401, params["N"], params["alpha"],
                                      params["seed"])
    inst = generate_instance(params["N"], params["alpha"], inst_seed)
    config = TrajectoryConfig(
        eta=params["eta"],
        steps=params["steps"] or None,
        init=params["init"],
    )
    rec = run_trajectory(spec, inst, config, seed=init_seed)
    with open(out / "trajectory.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "magnetization", "loss_per_variable"])
        for t, m, l in zip(rec.times, rec.magnetization, rec.loss):
            writer.writerow([int(t), f"{m:.8f}", f"{l:.10e}"])
    np.savez_compressed(out / "final_state.npz", w=rec.final_state)
    summary = {
        "recovered": bool(rec.recovered),
        "final_magnetization": float(rec.magnetization[-1]),
        "final_loss_per_variable": float(rec.loss[-1]),
        "steps_run": int(rec.times[-1]),
        "instance_seed": inst_seed,
        "init_seed": init_seed,
    }
    _write_json(out / "summary.json", summary)
    _emit_manifest(out, "simulate", params, t0, {"summary": summary})
    print(f"recovered={summary['recovered']} "
          f"|m|={abs(summary['final_magnetization']):.4f} "
          f"loss={summary['final_loss_per_variable']:.3e} -> {out}")
    return EXIT_OK


def _cmd_spectrum(args: argparse.Namespace) -> int:
    from .spectrum import full_spectrum

    t0 = time.perf_counter()
    defaults = dict(run=None, out=None)
    params = _effective(args, _load_config(args.config, "spectrum"), defaults)
    if not params["run"]:
        raise _fail(EXIT_MISSING_INPUT, "missing-input", "--run DIR is required")
    run = Path(params["run"])
    manifest_path = run / "manifest.json"
    state_path = run / "final_state.npz"
    if not manifest_path.exists() or not state_path.exists():
        raise _fail(EXIT_MISSING_INPUT, "missing-input",
                    f"{run} is not a finished simulate directory")
    manifest = json.loads(manifest_path.read_text())
    sim = manifest.get("params", {})
    summary = manifest.get("summary", {})
    for key in ("a", "alpha", "N"):
        if key not in sim:
            raise _fail(EXIT_MISSING_INPUT, "missing-input",
                        f"simulate manifest lacks {key!r}")
    spec = LossSpec(sim["a"])
    inst = generate_instance(sim["N"], sim["alpha"], summary["instance_seed"])
    with np.load(state_path) as data:
        w = np.asarray(data["w"], dtype=np.float64)
    report = full_spectrum(spec, inst, w)
    out = _out_dir(params, "spectrum") if params["out"] else run
    with open(out / "spectrum.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda"])
        for lam in report.eigenvalues:
            writer.writerow([f"{lam:.10e}"])
    payload = {
        "lambda_min": report.lambda_min,
        "lambda_max": float(report.eigenvalues[-1]),
        "mu_shift": report.mu_shift,
        "signal_overlap_sq": report.signal_overlap_sq,
        "outlier_detached": bool(report.outlier_detached),
        "bulk_left_estimate": report.bulk_left_estimate,
    }
    _write_json(out / "spectrum.json", payload)
    # writing in place must leave the simulate manifest intact
    if params["out"]:
        _emit_manifest(out, "spectrum", params, t0, {"summary": payload})
    print(f"lambda_min={report.lambda_min:.6f} "
          f"outlier_detached={payload['outlier_detached']} -> {out}")
    return EXIT_OK


def _cmd_rmt_density(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(a=0.01, alpha=4.0, density="analytic-init", pool=None,
                    points=400, out=None)
    params = _effective(args, _load_config(args.config, "rmt-density"), defaults)
    density = _make_density(params)
    alpha = params["alpha"]
    _, lam_minus = left_edge(density, alpha)
    try:
        from .rmt import right_edge
        _, lam_plus = right_edge(density, alpha)
    except StructuralError:
        lam_plus = lam_minus + 10.0 * max(1.0, abs(lam_minus))
    span = lam_plus - lam_minus
    grid = np.linspace(lam_minus - 0.05 * span, lam_plus + 0.05 * span,
                       int(params["points"]))
    solution = bulk_density(density, alpha, grid)
    out = _out_dir(params, "rmt-density")
    with open(out / "density.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["lambda", "rho"])
        for lam, rho in zip(solution.grid, solution.density):
            writer.writerow([f"{lam:.10e}", f"{rho:.10e}"])
    report = outlier(density, alpha)
    payload = {
        "alpha": alpha,
        "left_edge": lam_minus,
        "right_edge": lam_plus,
        "outlier_exists": bool(report.exists),
        "outlier_lambda": report.lambda_star if report.exists else None,
    }
    _write_json(out / "edges.json", payload)
    _emit_manifest(out, "rmt-density", params, t0, {"summary": payload})
    print(f"bulk edges [{lam_minus:.6f}, {lam_plus:.6f}] "
          f"outlier={payload['outlier_exists']} -> {out}")
    return EXIT_OK


def _cmd_bbp(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(a=0.01, density="analytic-init", pool=None, tol=1e-3,
                    out=None)
    params = _effective(args, _load_config(args.config, "bbp"), defaults)
    density = _make_density(params)
    if isinstance(density, EmpiricalDensity):
        density.require_bbp_precision()
    value = float(bbp_alpha(density, tol=params["tol"]))
    out = _out_dir(params, "bbp")
    payload = {
        "alpha_bbp": value,
        "tol": params["tol"],
        "a": params["a"],
        "density": params["density"],
    }
    _write_json(out / "bbp.json", payload)
    _emit_manifest(out, "bbp", params, t0, {"summary": payload})
    print(f"alpha_bbp = {value:.4f} (+/- {params['tol']:g}) -> {out}")
    return EXIT_OK


def _cmd_replica_solve(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(a=0.01, alpha=0.0, alpha0=4.3, tol=1e-3, out=None)
    params = _effective(args, _load_config(args.config, "replica-solve"),
                        defaults)
    spec = LossSpec(params["a"])
    if params["alpha"]:
        result = replica.solve_threshold_state(spec, params["alpha"])
        alpha_star = params["alpha"]
    else:
        alpha_star, result = replica.threshold_bbp_alpha(
            spec, alpha0=params["alpha0"], tol=params["tol"])
    density = replica.joint_density_1rsb(spec, alpha_star, result.params)
    bbp = float(bbp_alpha(density))
    out = _out_dir(params, "replica-solve")
    with open(out / "density.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["y", "yhat", "weight"])
        for w, y, yh in zip(density.weights, density.y, density.yhat):
            writer.writerow([f"{y:.10e}", f"{yh:.10e}", f"{w:.10e}"])
    payload = {
        "alpha": float(alpha_star),
        "chi": float(result.params.chi),
        "z": float(result.params.z),
        "q0": float(result.params.q0),
        "residual_chi": float(result.residuals[0]),
        "residual_q0": float(result.residuals[1]),
        "residual_marginality": float(result.residuals[2]),
        "converged": bool(result.converged),
        "message": result.message,
        "alpha_bbp": bbp,
    }
    _write_json(out / "replica.json", payload)
    _emit_manifest(out, "replica-solve", params, t0, {"summary": payload})
    if not result.converged:
        raise _fail(EXIT_COMPUTATION, "non-convergence", result.message)
    print(f"alpha={alpha_star:.4f} chi={payload['chi']:.6f} z={payload['z']:.6f} "
          f"q0={payload['q0']:.4f} alpha_bbp={bbp:.4f} -> {out}")
    return EXIT_OK


def _parse_alpha_grid(raw) -> tuple[float, ...]:
    if isinstance(raw, str):
        raw = [tok for tok in raw.split(",") if tok.strip()]
    return tuple(float(x) for x in raw)


def _cmd_sweep(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(a=0.01, N_list="256", alpha_grid="3.0,3.5,4.0",
                    seeds=4, init="random", eta=2e-4,
                    steps_rule="12000*log2(N)", out=None)
    params = _effective(args, _load_config(args.config, "sweep"), defaults)
    workers = os.environ.get("PRLAND_WORKERS")
    if workers and workers.strip() not in ("", "1"):
        print("note: worker pool not available in this build; "
              "running cells sequentially", file=sys.stderr)
    out = _out_dir(params, "sweep")
    if isinstance(params["N_list"], str):
        N_list = tuple(int(x) for x in params["N_list"].split(",") if x.strip())
    else:
        N_list = tuple(int(x) for x in params["N_list"])
    spec = SweepSpec(
        loss_a=params["a"],
        N_list=N_list,
        alpha_grid=_parse_alpha_grid(params["alpha_grid"]),
        seeds_per_cell=params["seeds"],
        init=params["init"],
        eta=params["eta"],
        steps_rule=params["steps_rule"],
        output_dir=str(out),
    )
    table = run_sweep(spec)
    _emit_manifest(out, "sweep", params, t0, {"spec": str(spec)})
    for row in sorted(table.rows, key=lambda r: (r.N, r.alpha)):
        print(f"N={row.N} alpha={row.alpha:.3f} rate={row.rate:.2f} "
              f"[{row.ci_low:.2f}, {row.ci_high:.2f}]")
    print(f"-> {out}/recovery.csv")
    return EXIT_OK


def _cmd_threshold_sample(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(a=0.01, alpha=4.0, N=512, seeds=4, times="plateau",
                    eta=2e-4, t_c=60000, out=None)
    params = _effective(args, _load_config(args.config, "threshold-sample"),
                        defaults)
    raw_times = params["times"]
    if isinstance(raw_times, str):
        raw_times = [tok.strip() for tok in raw_times.split(",") if tok.strip()]
    times = tuple(t if t == "plateau" else int(t) for t in raw_times)
    out = _out_dir(params, "threshold-sample")
    pools = sample_threshold_pool(
        params["a"], params["alpha"], params["N"], times=times,
        seeds=params["seeds"], eta=params["eta"], t_c=params["t_c"],
        output_dir=str(out),
    )
    sizes = {}
    for tag, pool in pools.items():
        np.savez_compressed(out / f"pool_{tag}.npz", pairs=pool.pairs)
        sizes[tag] = pool.size
    _emit_manifest(out, "threshold-sample", params, t0, {
        "pool_sizes": sizes,
        "loss_a": params["a"], "times": list(pools.keys()),
        "eta": params["eta"], "t_c": params["t_c"],
    })
    for tag, size in sizes.items():
        print(f"pool[{tag}]: {size} pairs")
    print(f"-> {out}")
    return EXIT_OK


def _cmd_phase_diagram(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(pool_dir=None, alpha=0.0, out=None)
    params = _effective(args, _load_config(args.config, "phase-diagram"),
                        defaults)
    if not params["pool_dir"]:
        raise _fail(EXIT_MISSING_INPUT, "missing-input", "--pool-dir is required")
    pool_dir = Path(params["pool_dir"])
    manifest_path = pool_dir / "manifest.json"
    if not manifest_path.exists():
        raise _fail(EXIT_MISSING_INPUT, "missing-input",
                    f"{pool_dir} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") not in ("threshold_pool", "cli_threshold_sample"):
        raise _fail(EXIT_MISSING_INPUT, "missing-input",
                    f"{pool_dir} is not a threshold pool directory")
    loss_a = manifest.get("loss_a", manifest.get("params", {}).get("a"))
    eta = manifest.get("eta", manifest.get("params", {}).get("eta", 2e-4))
    t_c = manifest.get("t_c", manifest.get("params", {}).get("t_c", 60000))
    labels = manifest["times"]
    seeds = sorted(pool_dir.glob("seed*.npz"))
    if not seeds:
        raise _fail(EXIT_MISSING_INPUT, "missing-input",
                    f"{pool_dir} holds no per-seed pool files")
    curve = []
    for label in labels:
        pairs = []
        for path in seeds:
            with np.load(path) as data:
                pairs.append(np.column_stack([data["y"], data[f"yhat_{label}"]]))
        density = EmpiricalDensity(loss_a, np.concatenate(pairs, axis=0))
        density.require_bbp_precision()
        step = t_c if label == "plateau" else int(label)
        curve.append((eta * step, float(bbp_alpha(density))))
    curve.sort()
    out = _out_dir(params, "phase-diagram")
    with open(out / "phase_diagram.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "alpha_bbp"])
        for t, a in curve:
            writer.writerow([f"{t:.6f}", f"{a:.6f}"])
    payload: dict = {"points": len(curve), "loss_a": loss_a}
    if params["alpha"]:
        payload["alpha"] = params["alpha"]
        payload["t_bbp"] = crossing_time(curve, params["alpha"])
    _write_json(out / "phase_diagram.json", payload)
    _emit_manifest(out, "phase-diagram", params, t0, {"summary": payload})
    for t, a in curve:
        print(f"t={t:.3f} alpha_bbp={a:.4f}")
    if "t_bbp" in payload:
        print(f"t_bbp({params['alpha']}) = {payload['t_bbp']}")
    print(f"-> {out}")
    return EXIT_OK


def _read_sweep_cells(run: Path) -> list[dict]:
    cells_path = run / "cells.jsonl"
    if not cells_path.exists():
        raise _fail(EXIT_MISSING_INPUT, "missing-input",
                    f"{run} has no cells ledger")
    cells = []
    with open(cells_path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                cells.append(json.loads(line))
    return cells


def _cmd_report(args: argparse.Namespace) -> int:
    t0 = time.perf_counter()
    defaults = dict(run=None, out=None)
    params = _effective(args, _load_config(args.config, "report"), defaults)
    if not params["run"]:
        raise _fail(EXIT_MISSING_INPUT, "missing-input", "--run DIR is required")
    run = Path(params["run"])
    manifest_path = run / "manifest.json"
    if not manifest_path.exists():
        raise _fail(EXIT_MISSING_INPUT, "missing-input",
                    f"{run} has no manifest.json")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("kind") not in ("recovery_sweep", "cli_sweep"):
        raise _fail(EXIT_MISSING_INPUT, "missing-input",
                    f"{run} is not a finished sweep directory "
                    f"(kind={manifest.get('kind')!r})")
    # aggregate the cell ledger (latest record per cell wins, as in a resume)
    done: dict[tuple, dict] = {}
    for cell in _read_sweep_cells(run):
        done[(cell["N"], cell["alpha_key"], cell["seed_index"])] = cell
    buckets: dict[tuple[int, float], list[dict]] = {}
    for cell in done.values():
        buckets.setdefault((cell["N"], float(cell["alpha"])), []).append(cell)
    rows = []
    for (N, alpha), cells in sorted(buckets.items()):
        successes = sum(1 for c in cells if c.get("recovered"))
        lo, hi = wilson_interval(successes, len(cells))
        rows.append(RecoveryRow(N=N, alpha=alpha, successes=successes,
                                trials=len(cells), rate=successes / len(cells),
                                ci_low=lo, ci_high=hi))
    table = RecoveryTable(rows=rows)
    out = _out_dir(params, "report") if params["out"] else run
    table.write_csv(out / "recovery.csv")
    _plot_recovery(out, table)
    # writing in place must leave the sweep manifest intact
    if params["out"]:
        _emit_manifest(out, "report", params, t0,
                       {"rows": len(rows), "source_kind": manifest.get("kind")})
    print(f"{len(rows)} (N, alpha) rows -> {out}/recovery.csv, recovery.svg")
    return EXIT_OK


def _plot_recovery(out: Path, table: RecoveryTable) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for N in table.N_values():
        rows = table.for_N(N)
        alphas = [r.alpha for r in rows]
        rates = [r.rate for r in rows]
        err_lo = [r.rate - r.ci_low for r in rows]
        err_hi = [r.ci_high - r.rate for r in rows]
        ax.errorbar(alphas, rates, yerr=[err_lo, err_hi], marker="o",
                    capsize=3, label=f"N={N}")
    ax.set_xlabel(r"$\alpha$")
    ax.set_ylabel("strong recovery rate")
    ax.set_ylim(-0.05, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out / "recovery.svg")
    plt.close(fig)


# ===== parser =====

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="prland",
        description=__doc__,
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help_text: str, func) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", help="TOML config file")
        p.add_argument("--out", help="output directory")
        p.set_defaults(func=func)
        return p

    p = add("simulate", "run one gradient-descent trajectory", _cmd_simulate)
    p.add_argument("--a", type=float, help="loss regularizer a")
    p.add_argument("--alpha", type=float, help="sampling ratio M/N")
    p.add_argument("--N", type=int, help="number of variables")
    p.add_argument("--seed", type=int, help="cell seed index")
    p.add_argument("--init", choices=["random", "spectral", "constrained"])
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--steps", type=int, help="step count (0 = 12000*log2(N))")

    p = add("spectrum", "full Hessian spectrum of a finished simulate run",
            _cmd_spectrum)
    p.add_argument("--run", help="simulate output directory")

    p = add("rmt-density", "predicted bulk spectral density on a grid",
            _cmd_rmt_density)
    p.add_argument("--a", type=float, help="loss regularizer a")
    p.add_argument("--alpha", type=float, help="sampling ratio M/N")
    p.add_argument("--density", choices=["analytic-init", "pool"])
    p.add_argument("--pool", help="pool .npz for --density pool")
    p.add_argument("--points", type=int, help="grid resolution")

    p = add("bbp", "spectral transition ratio alpha_BBP of a label density",
            _cmd_bbp)
    p.add_argument("--a", type=float, help="loss regularizer a")
    p.add_argument("--density", choices=["analytic-init", "pool"])
    p.add_argument("--pool", help="pool .npz for --density pool")
    p.add_argument("--tol", type=float, help="bisection tolerance")

    p = add("replica-solve", "1RSB threshold state and its BBP ratio",
            _cmd_replica_solve)
    p.add_argument("--a", type=float, help="loss regularizer a")
    p.add_argument("--alpha", type=float,
                   help="solve at this fixed ratio (default: self-consistent)")
    p.add_argument("--alpha0", type=float,
                   help="starting ratio for the self-consistent search")
    p.add_argument("--tol", type=float, help="self-consistency tolerance")

    p = add("sweep", "seeded recovery-rate sweep over (N, alpha)", _cmd_sweep)
    p.add_argument("--a", type=float, help="loss regularizer a")
    p.add_argument("--N-list", dest="N_list", help="comma-separated sizes")
    p.add_argument("--alpha-grid", dest="alpha_grid",
                   help="comma-separated ratios (sorted)")
    p.add_argument("--seeds", type=int, help="seeds per cell")
    p.add_argument("--init", choices=["random", "spectral", "constrained"])
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--steps-rule", dest="steps_rule",
                   help="'12000*log2(N)' or 'fixed:<steps>'")

    p = add("threshold-sample", "pool (y, yhat) pairs from constrained runs",
            _cmd_threshold_sample)
    p.add_argument("--a", type=float, help="loss regularizer a")
    p.add_argument("--alpha", type=float, help="sampling ratio M/N")
    p.add_argument("--N", type=int, help="number of variables")
    p.add_argument("--seeds", type=int, help="number of pooled runs")
    p.add_argument("--times", help="comma list of step indices or 'plateau'")
    p.add_argument("--eta", type=float, help="learning rate")
    p.add_argument("--t-c", dest="t_c", type=int, help="constrained step budget")

    p = add("phase-diagram", "alpha_BBP(t) curve from a sampled pool directory",
            _cmd_phase_diagram)
    p.add_argument("--pool-dir", dest="pool_dir",
                   help="threshold-sample output directory")
    p.add_argument("--alpha", type=float,
                   help="also report the crossing time t_BBP(alpha)")

    p = add("report", "CSV + plot bundle for a finished sweep directory",
            _cmd_report)
    p.add_argument("--run", help="sweep output directory")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as err:
        print(json.dumps({"error": err.kind, "detail": err.detail}),
              file=sys.stderr)
        return err.code
    except PrecisionError as err:
        print(json.dumps({"error": "insufficient-input", "detail": str(err)}),
              file=sys.stderr)
        return EXIT_MISSING_INPUT
    except (replica.ConvergenceError, StructuralError, BracketError,
            FixedPointError) as err:
        print(json.dumps({"error": "computation-failed", "detail": str(err)}),
              file=sys.stderr)
        return EXIT_COMPUTATION
    except ValueError as err:
        print(json.dumps({"error": "invalid-value", "detail": str(err)}),
              file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
