"""Matrix-free nonstationary spatial Gaussian-process modeling.

The field lives on locations lifted into an expanded space, is simulated by
cosine superposition, and is fitted with a collapsed Gibbs sampler.
"""

__version__ = "0.1.0"

from .covariance import (BasisSet, CovParams, ExpansionMap, cov, cov_matrix, default_tau,
                         eval_basis, expanded_distance, make_basis)
from .evaluation import dense_gp_oracle, ess, hpd_interval, rmspe
from .exceptions import ESDError, NumericalError, SamplerError, ValidationError
from .gibbs import ChainOutput, Hyperparams, ModelState, predict_posterior, run_chain
from .simdata import Dataset, SimSpec, friedman_f0, gen_case, load_csv
from .spectral import SpectralDraw, draw_spectral, empirical_covariogram, simulate_field

__all__ = [
    "BasisSet", "ChainOutput", "CovParams", "Dataset", "ESDError", "ExpansionMap", "Hyperparams",
    "ModelState", "NumericalError", "SamplerError", "SimSpec", "SpectralDraw", "ValidationError",
    "cov", "cov_matrix", "default_tau", "dense_gp_oracle", "draw_spectral", "empirical_covariogram",
    "ess", "eval_basis", "expanded_distance", "friedman_f0", "gen_case", "hpd_interval", "load_csv",
    "make_basis", "predict_posterior", "rmspe", "run_chain", "simulate_field",
]
