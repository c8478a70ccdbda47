"""Bayesian multi-cohort second-order factor regression with an unknown
dose-response break-point.

Core pieces: per-cohort measurement models with cohort-specific outcome
batteries, a shared piecewise-linear exposure effect on a latent cognition
score, missing-data collapsing, a no-U-turn Hamiltonian Monte Carlo
sampler, and model evidence via WAIC and bridge sampling.
"""

from ._kernels import backend_name
from .cohorts import CohortData, CohortSpec, validate_cohort
from .params import (
    CohortParams,
    DoseResponse,
    LatentHandling,
    ModelVariant,
    ParameterSet,
    ParamLayout,
    PsiNotPositiveDefinite,
    assemble_psi,
)
from .priors import PriorConfig, log_prior, log_prior_blocks
from .likelihood import (
    PosteriorDensity,
    SelectionIndex,
    grad_log_posterior,
    linear_predictor,
    loglik_full,
    loglik_fully_marginal,
    loglik_reduced,
    marginal_moments_xi,
)

__version__ = "0.1.0"

__all__ = [
    "CohortData",
    "CohortSpec",
    "CohortParams",
    "DoseResponse",
    "LatentHandling",
    "ModelVariant",
    "ParameterSet",
    "ParamLayout",
    "PosteriorDensity",
    "PriorConfig",
    "PsiNotPositiveDefinite",
    "SelectionIndex",
    "assemble_psi",
    "backend_name",
    "grad_log_posterior",
    "linear_predictor",
    "log_prior",
    "log_prior_blocks",
    "loglik_full",
    "loglik_fully_marginal",
    "loglik_reduced",
    "marginal_moments_xi",
    "validate_cohort",
    "__version__",
]
