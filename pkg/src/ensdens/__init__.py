"""Ensemble model-based clustering.

Fit a grid of Gaussian mixture models, combine the best candidates into
a single density by penalized-likelihood convex weighting, and partition
data by the modes of the resulting ensemble density.
"""

from .evaluation import ContingencyTable, IseGrid, adjusted_rand_index, ise, mise_summary
from .fit import (
    CandidatePool,
    FitConfig,
    FitFailure,
    PipelineError,
    bic,
    em_fit,
    fit_grid,
    map_classify,
    occam_window,
)
from .mixture import (
    CovarianceStructure,
    EnsembleDensity,
    GaussianComponent,
    GaussianMixture,
    ensemble_log_density,
    flatten_ensemble,
    gaussian_log_density,
    log_sum_exp,
    mixture_log_density,
)
from .modal import Mode, Partition, find_partition, mem_ascend, predict_labels
from .simulation import (
    ExperimentPlan,
    ScenarioSpec,
    SkewNormalComponent,
    run_experiment,
    sample_scenario,
    scenario,
    true_log_density,
)
from .weights import (
    CvConfig,
    PenaltySpec,
    WeightFit,
    e_step,
    fit_weights,
    lambda_aic,
    lambda_bic,
    lambda_cv,
    log_density_matrix,
    loglik_alpha,
    m_step,
    penalized_loglik,
)

__version__ = "0.1.0"

__all__ = [
    "CandidatePool",
    "ContingencyTable",
    "CovarianceStructure",
    "CvConfig",
    "EnsembleDensity",
    "ExperimentPlan",
    "FitConfig",
    "FitFailure",
    "GaussianComponent",
    "GaussianMixture",
    "IseGrid",
    "Mode",
    "Partition",
    "PenaltySpec",
    "PipelineError",
    "ScenarioSpec",
    "SkewNormalComponent",
    "WeightFit",
    "adjusted_rand_index",
    "bic",
    "e_step",
    "em_fit",
    "ensemble_log_density",
    "find_partition",
    "fit_grid",
    "fit_weights",
    "flatten_ensemble",
    "gaussian_log_density",
    "ise",
    "lambda_aic",
    "lambda_bic",
    "lambda_cv",
    "log_density_matrix",
    "log_sum_exp",
    "loglik_alpha",
    "m_step",
    "map_classify",
    "mem_ascend",
    "mise_summary",
    "mixture_log_density",
    "occam_window",
    "penalized_loglik",
    "predict_labels",
    "run_experiment",
    "sample_scenario",
    "scenario",
    "true_log_density",
]
