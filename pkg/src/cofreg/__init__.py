"""Sparse unit-rank factor regression for mixed, possibly incomplete outcomes.

Fits Theta = O + Z beta + X C for Gaussian/Bernoulli/Poisson response
columns, with C a sum of sparse unit-rank components extracted sequentially
or in parallel under an adaptive elastic-net penalty tuned by entrywise
cross-validation.
"""

from .extraction import fit_parallel, fit_sequential, sequential_cv_curve
from .families import (
    BERNOULLI,
    GAUSSIAN,
    POISSON,
    FamilySpec,
    ObservedOutcomes,
    b_prime,
    b_second,
    b_value,
    kappa0,
    neg_log_likelihood,
)
from .model import (
    DesignMatrices,
    FitResult,
    UnitRankComponent,
    compose_coefficient,
    natural_params,
    rescale_component,
)
from .reduced_rank import ReducedRankFit, adaptive_weights, fit_reduced_rank, svd_truncate, xsvd_decompose
from .simbench import SimSpec, SimTruth, gen_coef, gen_design, gen_responses, mask_missing, metrics, simulate
from .tuning import CvCurve, TuningConfig, kfold_cv, lambda_path, select_one_sd
from .unit_rank import (
    PenaltyConfig,
    SolverConfig,
    SolverError,
    SolverState,
    UnitRankFit,
    beta_step,
    fit_unit_rank,
    phi_step,
    scaling_factors,
    soft_threshold,
    u_step,
    v_step,
)

__version__ = "0.1.0"

__all__ = [
    "BERNOULLI",
    "GAUSSIAN",
    "POISSON",
    "CvCurve",
    "DesignMatrices",
    "FamilySpec",
    "FitResult",
    "ObservedOutcomes",
    "PenaltyConfig",
    "ReducedRankFit",
    "SimSpec",
    "SimTruth",
    "SolverConfig",
    "SolverError",
    "SolverState",
    "TuningConfig",
    "UnitRankComponent",
    "UnitRankFit",
    "adaptive_weights",
    "b_prime",
    "b_second",
    "b_value",
    "beta_step",
    "compose_coefficient",
    "fit_parallel",
    "fit_reduced_rank",
    "fit_sequential",
    "fit_unit_rank",
    "gen_coef",
    "gen_design",
    "gen_responses",
    "kappa0",
    "kfold_cv",
    "lambda_path",
    "mask_missing",
    "metrics",
    "natural_params",
    "neg_log_likelihood",
    "phi_step",
    "rescale_component",
    "scaling_factors",
    "select_one_sd",
    "sequential_cv_curve",
    "simulate",
    "soft_threshold",
    "svd_truncate",
    "u_step",
    "v_step",
    "xsvd_decompose",
]
