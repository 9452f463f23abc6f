"""Phase-retrieval teacher-student problem: loss family, instances, derivatives.

The student observes only the magnitudes |y_i| of Gaussian projections
y_i = x_i . w* of a planted signal w* on the sphere of radius sqrt(N), and
fits them with the normalized intensity loss

    l_a(y, yhat) = (y^2 - yhat^2)^2 / (a + y^2),

whose label-curvature f = d^2 l_a / dyhat^2 drives every spectral computation
downstream.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

RNG_ID = "numpy.random.Generator(PCG64)"  # recorded in artifacts for reproducibility


@dataclass(frozen=True)
class LossSpec:
    """Normalization constant a of the intensity loss family l_a."""

    a: float = 0.01

    def __post_init__(self) -> None:
        if self.a < 0:
            raise ValueError(f"loss constant a must be nonnegative, got {self.a}")


@dataclass(frozen=True)
class Instance:
    """One planted (N, M) problem: signal, sensing vectors, magnitude labels."""

    N: int
    M: int
    alpha: float
    signal: np.ndarray      # w*, norm sqrt(N)
    sensing: np.ndarray     # (M, N), rows x_i
    labels: np.ndarray      # |x_i . w*|
    seed: int
    unit_norm_rows: bool = False
    rng_id: str = RNG_ID

    def __post_init__(self) -> None:
        if self.sensing.shape != (self.M, self.N):
            raise ValueError("sensing matrix shape does not match (M, N)")
        if self.signal.shape != (self.N,):
            raise ValueError("signal length does not match N")
        if self.labels.shape != (self.M,):
            raise ValueError("label count does not match M")
        nrm = float(np.linalg.norm(self.signal))
        if abs(nrm - np.sqrt(self.N)) > 1e-12 * np.sqrt(self.N):
            raise ValueError("signal norm must be sqrt(N) to relative 1e-12")


def generate_instance(
    N: int,
    alpha: float,
    seed: int,
    unit_norm_rows: bool = False,
) -> Instance:
    """Draw a planted instance with M = round(alpha * N) Gaussian sensing vectors.

    Sensing entries are i.i.d. N(0, 1/N) so each row has unit norm in
    expectation and the projections y_i are order one; `unit_norm_rows`
    rescales every row to exactly unit norm instead.
    """
    if N < 2:
        raise ValueError(f"N must be >= 2, got {N}")
    if alpha <= 0:
        raise ValueError(f"alpha must be positive, got {alpha}")
    M = int(round(alpha * N))
    if M < 1:
        raise ValueError(f"round(alpha*N) = {M} must be >= 1")
    rng = np.random.default_rng(seed)
    signal = rng.standard_normal(N)
    signal *= np.sqrt(N) / np.linalg.norm(signal)
    sensing = rng.standard_normal((M, N)) / np.sqrt(N)
    if unit_norm_rows:
        sensing /= np.linalg.norm(sensing, axis=1, keepdims=True)
    labels = np.abs(sensing @ signal)
    return Instance(
        N=N, M=M, alpha=M / N, signal=signal, sensing=sensing,
        labels=labels, seed=seed, unit_norm_rows=unit_norm_rows,
    )


# ===== scalar loss family (vectorized over numpy arrays) =====

def _check_denominator(spec: LossSpec, y) -> None:
    if spec.a == 0 and np.any(np.asarray(y) == 0):
        raise ZeroDivisionError("a + y^2 = 0: loss undefined at y = 0 with a = 0")


def loss_pair(spec: LossSpec, y, yhat):
    """l_a(y, yhat) = (y^2 - yhat^2)^2 / (a + y^2)."""
    _check_denominator(spec, y)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    out = (y**2 - yhat**2) ** 2 / (spec.a + y**2)
    return out if out.ndim else float(out)


def dloss_dyhat(spec: LossSpec, y, yhat):
    """First label derivative: -4 yhat (y^2 - yhat^2) / (a + y^2)."""
    _check_denominator(spec, y)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    out = -4.0 * yhat * (y**2 - yhat**2) / (spec.a + y**2)
    return out if out.ndim else float(out)


def curvature_weight(spec: LossSpec, y, yhat):
    """Second label derivative f = (12 yhat^2 - 4 y^2) / (a + y^2).

    Bounded below by -4, unbounded above; the Hessian of the total loss is
    the f-weighted sum of sensing projectors.
    """
    _check_denominator(spec, y)
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    out = (12.0 * yhat**2 - 4.0 * y**2) / (spec.a + y**2)
    return out if out.ndim else float(out)


# ===== instance-level objective =====

def predicted_labels(inst: Instance, w: np.ndarray) -> np.ndarray:
    """yhat_i = x_i . w."""
    w = np.asarray(w)
    if w.shape != (inst.N,):
        raise ValueError(f"w has shape {w.shape}, expected ({inst.N},)")
    return inst.sensing @ w


def total_loss(spec: LossSpec, inst: Instance, w: np.ndarray) -> float:
    """L(w) = (1/2) sum_i l_a(y_i, x_i . w)."""
    yhat = predicted_labels(inst, w)
    return 0.5 * float(np.sum(loss_pair(spec, inst.labels, yhat)))


def gradient(spec: LossSpec, inst: Instance, w: np.ndarray) -> np.ndarray:
    """grad L = (1/2) sum_i dl/dyhat(y_i, yhat_i) x_i."""
    yhat = predicted_labels(inst, w)
    coeff = 0.5 * dloss_dyhat(spec, inst.labels, yhat)
    return coeff @ inst.sensing


# ===== serialization =====

def save_instance(inst: Instance, path, embed_tensors: bool = True) -> None:
    """Write the instance to an .npz container; seed + sizes regenerate it."""
    payload = dict(
        N=inst.N, M=inst.M, alpha=inst.alpha, seed=inst.seed,
        unit_norm_rows=inst.unit_norm_rows, rng_id=inst.rng_id,
    )
    if embed_tensors:
        payload.update(signal=inst.signal, sensing=inst.sensing, labels=inst.labels)
    np.savez_compressed(path, **payload)


def load_instance(path) -> Instance:
    """Read an .npz container; regenerate tensors from the seed if not embedded."""
    with np.load(path, allow_pickle=False) as data:
        if "sensing" in data:
            return Instance(
                N=int(data["N"]), M=int(data["M"]), alpha=float(data["alpha"]),
                signal=data["signal"], sensing=data["sensing"], labels=data["labels"],
                seed=int(data["seed"]), unit_norm_rows=bool(data["unit_norm_rows"]),
                rng_id=str(data["rng_id"]),
            )
        return generate_instance(
            int(data["N"]), float(data["M"]) / float(data["N"]), int(data["seed"]),
            unit_norm_rows=bool(data["unit_norm_rows"]),
        )
