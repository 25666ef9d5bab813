"""Targeted empirical-Bayes factor regression (TEB-FAR).

Joint Gaussian factor models of predictors and response whose response
idiosyncratic variance is fixed at a cross-validated value, together with
KL-optimal low-rank approximations, baseline regressors, simulation
scenarios and a benchmarking harness.
"""
from .errors import (ConfigError, DataError, DimensionMismatch, EmptyInput, LengthMismatch,
                     MaxIterationsWarning, NotPositiveDefinite, RankDeficient, SamplerError,
                     TebfarError)
from .gauss import (cholesky, conditional_regression, gaussian_logpdf, kl_gaussian, make_rng,
                    mvn_sample)
from .model import (FactorModel, InducedRegression, MgpHyperparams, MgpState, implied_covariance,
                    induced_regression, loglik_split, one_factor_regression)
from .gibbs import PosteriorDraws, SamplerConfig, load_draws, run_chain, save_draws
from .select import CvPlan, SigmaGrid, cv_select_sigma, fit_tebfar, mse, predict
from .klopt import KlScanResult, expected_loglik_split, loading_distance, population_em_fit, \
    scan_sigma_grid
from .baselines import lasso_cv, lasso_fit, ols_fit, ridge_cv, ridge_fit
from .dataio import Dataset, apply_standardization, load_csv, split, standardize, \
    unstandardize_predictions
from .simulate import motivating_model, simulate
from .align import align_columns, summarize_aligned, varimax

__version__ = "0.1.0"
