"""Stationary and non-stationary Gaussian random fields on regular grids.

A GMRF approximation of the SPDE ``(kappa^2(s) - div H(s) grad) u = W`` with
spline-parametrized ``kappa^2`` and ``H = gamma I + v v'``, fitted by
penalized maximum likelihood with analytic gradients.
"""
from .basis import Basis1D, Basis2D, build_basis_1d, build_basis_2d, constant_basis_2d, eval_field, gram_matrices, rw2_precision
from .errors import (
    DataFormatError,
    InvalidBasisError,
    InvalidGridError,
    NotPositiveDefiniteError,
    OutOfDomainError,
    PatternError,
    SpdeGrfError,
    UnsupportedConfigurationError,
)
from .geometry import Grid, build_grid, locate_cell, selection_matrix
from .inference import (
    cov_summary,
    crps_gaussian,
    cv_penalty_search,
    detrend,
    holdout_split,
    log_score_holdout,
    mean_crps,
    predict_grid,
    rmse,
    score_holdout,
    simulate_dataset,
    variogram,
)
from .model import (
    Dataset,
    FitResult,
    LatentSystem,
    ModelSpec,
    build_latent_system,
    fit,
    gradient,
    log_marginal_density,
    penalized_loglik,
    regions_by_longitude,
    verify_stationary_summary,
)
from .spde import NonStatParams, assemble_A, assemble_dQ, assemble_Q, eval_spde_fields

__version__ = "0.1.0"
