"""Dose-response estimation for continuous treatments measured with error.

The pipeline combines deconvolution kernels with locally fitted generalized
empirical likelihood weights: an error-corrected kernel stage recovers
local moments of the latent treatment, a sieve basis of the covariates
pins down the weight function, and SIMEX picks the regression bandwidth.
Pointwise confidence intervals and a seeded simulation harness are included.
"""

__version__ = "0.1.0"

from .basis import BasisSpec, CovariateScaler, evaluate_basis, fit_scaler
from .errors import (AllWeightsZero, BasisOverflow, DeconvAdrfError,
                     DegenerateCovariate, DegenerateVariance, DomainViolation,
                     ExtrapolationDegenerate, InputDataError,
                     InsufficientReplicates, NoiseExceedsSignal, OverflowRisk,
                     TooManySkipped)
from .estimator import (AdrfCurve, ObservedSample, f_t_hat, m_hat, mu_hat,
                        mu_oracle, naive_mu)
from .gel import (GelCriterion, WeightFit, fit_weights_grid, get_criterion,
                  pi_hat, solve_lambda)
from .inference import CiBand, ci_pointwise, influence_values
from .kernels import (DeconvEvaluator, ErrorModel, KernelSpec, base_kernel,
                      base_kernel_second_derivative,
                      conditional_unbiasedness_check,
                      estimate_cf_from_replicates, kernel_weights, phi_l)
from .simlab import (MODELS, MonteCarloReport, SimModel, default_grid,
                     generate, ise, run_monte_carlo)
from .tuning import (SimexConfig, SmoothingParams, plug_in_bandwidth,
                     select_k, simex_select_h, two_step_tune)

__all__ = [
    "AdrfCurve", "AllWeightsZero", "BasisOverflow", "BasisSpec", "CiBand",
    "CovariateScaler", "DeconvAdrfError", "DeconvEvaluator",
    "DegenerateCovariate", "DegenerateVariance", "DomainViolation",
    "ErrorModel", "ExtrapolationDegenerate", "GelCriterion", "InputDataError",
    "InsufficientReplicates", "KernelSpec", "MODELS", "MonteCarloReport",
    "NoiseExceedsSignal", "ObservedSample", "OverflowRisk", "SimModel",
    "SimexConfig", "SmoothingParams", "TooManySkipped", "WeightFit",
    "base_kernel", "base_kernel_second_derivative", "ci_pointwise",
    "conditional_unbiasedness_check", "default_grid",
    "estimate_cf_from_replicates", "evaluate_basis", "f_t_hat",
    "fit_scaler", "fit_weights_grid", "generate", "get_criterion",
    "influence_values", "ise", "kernel_weights", "m_hat", "mu_hat",
    "mu_oracle", "naive_mu", "phi_l", "pi_hat", "plug_in_bandwidth",
    "run_monte_carlo", "select_k", "simex_select_h", "solve_lambda",
    "two_step_tune",
]
