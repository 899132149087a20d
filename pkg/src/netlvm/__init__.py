"""netlvm: generalized linear latent variable models for multiview networks.

Fits low-rank latent-factor models to collections of networks observed
over a common node set, one network per layer, by maximizing a
Laplace-approximated marginal likelihood.  Includes an exact quadrature
oracle, a reference MCMC sampler, sandwich covariance inference, a
Monte Carlo harness and residual diagnostics.
"""

from .diagnostics import (
    dunn_smyth_residuals,
    eigen_error_mean,
    qq_data,
    rmse_pi,
    spectral_radius,
)
from .errors import (
    DataFormatError,
    InnerSolveError,
    InvalidSpecError,
    NetlvmError,
    NumericalError,
    RankDeficiencyError,
    SupportError,
)
from .estimator import (
    FitOptions,
    FitResult,
    MultiviewNetworkLVM,
    build_constraints,
    fit_glamle,
    fitted_mean_matrices,
    n_free_params,
    pack_params,
    sandwich_vcov,
    unpack_params,
    wald_test,
)
from .laplace import (
    LaplaceOptions,
    grad_alpha,
    grad_sigma,
    laplace_loglayer,
    laplace_loglik,
    q_function,
    solve_latent_mode,
)
from .mcmc import McmcConfig, McmcState, PosteriorSample, run_mwg
from .model import (
    Loadings,
    ModelSpec,
    MultiviewData,
    dyad_count,
    dyad_pairs,
)
from .quadrature import laplace_error, marginal_loglayer_quadrature
from .simulate import McPlan, SimTruth, gen_network, gen_truth, run_monte_carlo

__version__ = "0.1.0"

__all__ = [
    "DataFormatError", "FitOptions", "FitResult", "InnerSolveError",
    "InvalidSpecError", "LaplaceOptions", "Loadings", "McPlan", "McmcConfig",
    "McmcState", "ModelSpec", "MultiviewData", "MultiviewNetworkLVM",
    "NetlvmError", "NumericalError", "PosteriorSample", "RankDeficiencyError",
    "SimTruth", "SupportError", "build_constraints", "dunn_smyth_residuals",
    "dyad_count", "dyad_pairs", "eigen_error_mean", "fit_glamle",
    "fitted_mean_matrices", "gen_network", "gen_truth", "grad_alpha",
    "grad_sigma", "laplace_error", "laplace_loglayer", "laplace_loglik",
    "marginal_loglayer_quadrature", "n_free_params", "pack_params",
    "q_function", "qq_data", "rmse_pi", "run_monte_carlo", "run_mwg",
    "sandwich_vcov", "solve_latent_mode", "spectral_radius", "unpack_params",
    "wald_test",
]
