"""Gradient-flow dynamics on the phase-retrieval loss landscape, with
random-matrix and replica predictions for the time-dependent Hessian spectrum.
"""
__version__ = "0.1.0"

from .model import (
    Instance,
    LossSpec,
    curvature_weight,
    dloss_dyhat,
    generate_instance,
    gradient,
    loss_pair,
    total_loss,
)
from .dynamics import (
    TrajectoryConfig,
    TrajectoryRecord,
    default_steps,
    gd_step,
    init_constrained,
    init_random,
    init_spectral,
    magnetization,
    run_trajectory,
)
from .spectrum import (
    SpectrumReport,
    empirical_density,
    extreme_eigenpair,
    full_spectrum,
    hessian_dense,
    hessian_times_vector,
    mu_shift,
)
from .rmt import (
    AnalyticInitDensity,
    EmpiricalDensity,
    JointLabelDensity,
    OutlierReport,
    Replica1RSBDensity,
    bbp_alpha,
    bulk_density,
    crossing_time,
    dynamical_bbp,
    left_edge,
    outlier,
    overlap_curve,
    right_edge,
    stieltjes_at,
)
from .replica import (
    QuadratureSpec,
    SaddleParams,
    SolveResult,
    free_energy_1rsb,
    joint_density_1rsb,
    marginality_residual,
    psi0,
    replicon_residual,
    saddle_residuals,
    solve_threshold_state,
    threshold_bbp_alpha,
)
from .harness import (
    RecoveryTable,
    SweepSpec,
    ThresholdSamplePool,
    constrained_sweep,
    crossing_alpha,
    finite_size_extrapolate,
    log_scaling_study,
    run_sweep,
    sample_threshold_pool,
    spectral_evolution_report,
)
