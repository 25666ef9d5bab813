"""Seeded data generators for the benchmark scenarios.

Scenarios 1 and 2 are sparse factor models with p = 20 predictors and
k = 10 factors whose column norms decay from 1 to 0.1. In scenario 1 the
response loads only on the weakest factor; in scenario 2 the response row is
drawn by the same sparse mechanism as the predictor rows. Scenario 3 is a
sparse linear regression (12 active coefficients, R^2 = 0.1) on predictors
from a dense 8-factor model. ``"motivating"`` is the fixed 10-variable
2-factor model whose dominant factor is unrelated to the response.

Scenarios 1 to 3 are rescaled to unit marginal variances. The motivating
model keeps its original scale (response variance 1.2).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .dataio import Dataset
from .gauss import make_rng
from .model import FactorModel, implied_covariance, induced_regression

SCENARIOS = ("1", "2", "3", "motivating")
_CODES = {"1": 1, "2": 2, "3": 3, "motivating": 4}

MOTIVATING_LOADINGS = np.array([
    [0, -4, 0, -8, -4, -6, 1, -1, 4, 0],
    [1, 0, 0, -1, 0, 1, 0, 1, 0, 1],
], dtype=float).T


def motivating_model() -> FactorModel:
    """Nine predictors plus response, two factors, all idiosyncratic variances 0.2."""
    return FactorModel(MOTIVATING_LOADINGS.copy(), np.full(10, 0.2))


def _sparse_exponential_loadings(rng, n_rows, k=10, nonzero=10):
    lam = np.zeros((n_rows, k))
    norms = np.round(1.0 - 0.1 * np.arange(k), 12)
    for l in range(k):
        rows = rng.choice(n_rows, size=nonzero, replace=False)
        lam[rows, l] = rng.exponential(1.0, size=nonzero)
        lam[:, l] *= norms[l] / np.linalg.norm(lam[:, l])
    return lam


def unit_variance_model(loadings, sigma_diag) -> FactorModel:
    """Rescale rows so the implied covariance has unit diagonal."""
    loadings = np.asarray(loadings, dtype=float)
    sigma_diag = np.asarray(sigma_diag, dtype=float)
    d = np.sum(loadings**2, axis=1) + sigma_diag
    return FactorModel(loadings / np.sqrt(d)[:, None], sigma_diag / d)


def scenario1_model(rng, p=20, k=10) -> FactorModel:
    lam_x = _sparse_exponential_loadings(rng, p, k)
    gamma = np.zeros(k)
    gamma[-1] = 1.0
    return unit_variance_model(np.vstack([lam_x, gamma]), np.full(p + 1, 0.2))


def scenario2_model(rng, p=20, k=10) -> FactorModel:
    lam = _sparse_exponential_loadings(rng, p + 1, k)
    return unit_variance_model(lam, np.full(p + 1, 0.2))


def scenario3_truth(rng, p=20, k=8, n_active=12, r2=0.1):
    """Predictor factor model, regression coefficients and joint covariance.

    Returns ``(x_model, beta, joint_cov)`` where ``x_model`` is the
    unit-variance factor model of the predictors alone (a FactorModel whose
    last row is the final predictor, not a response).
    """
    lam = rng.exponential(1.0, size=(p, k))
    sig = np.full(p, 0.01)
    d = np.sum(lam**2, axis=1) + sig
    lam, sig = lam / np.sqrt(d)[:, None], sig / d
    cx = lam @ lam.T + np.diag(sig)
    beta = np.zeros(p)
    active = rng.choice(p, size=n_active, replace=False)
    beta[active] = rng.standard_normal(n_active)
    beta *= np.sqrt(r2 / (beta @ cx @ beta))
    joint = np.empty((p + 1, p + 1))
    joint[:p, :p] = cx
    joint[:p, p] = joint[p, :p] = cx @ beta
    joint[p, p] = 1.0
    return FactorModel(lam, sig), beta, joint


@dataclass
class SimulatedData:
    """One generated replicate.

    ``beta``/``sigma2`` are the true regression of y on x; ``model`` is the
    joint factor model (scenarios 1, 2, motivating) or the predictor-only
    factor model (scenario 3). ``factors_*`` hold the latent scores used to
    generate factor-model data.
    """

    scenario: str
    seed: int
    train: Dataset
    test: Dataset
    covariance: np.ndarray
    model: FactorModel
    beta: np.ndarray
    sigma2: float
    factors_train: np.ndarray | None = None
    factors_test: np.ndarray | None = None

    def truth_dict(self) -> dict:
        d = {"scenario": self.scenario, "seed": self.seed, "beta": self.beta.tolist(),
             "sigma2": self.sigma2, "covariance": self.covariance.tolist()}
        key = "x_model" if self.scenario == "3" else "model"
        d[key] = self.model.to_dict()
        return d

    def write_truth(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.truth_dict(), fh, indent=2)


def sample_factor_model(model: FactorModel, n: int, rng):
    """Draw ``n`` rows of (x, y) and the factor scores behind them."""
    eta = rng.standard_normal((n, model.k))
    eps = rng.standard_normal((n, model.p + 1)) * np.sqrt(model.sigma_diag)
    return eta @ model.loadings.T + eps, eta


def _columns(p):
    return tuple(f"x{j + 1}" for j in range(p))


def simulate(scenario, n_train: int, n_test: int, seed: int) -> SimulatedData:
    """Generate a train/test replicate of ``scenario`` (``"1"``, ``"2"``, ``"3"`` or ``"motivating"``).

    The ground truth depends only on ``(scenario, seed)``; sample sizes only
    affect how many rows are drawn.
    """
    scenario = str(scenario)
    if scenario not in SCENARIOS:
        raise ValueError(f"unknown scenario {scenario!r}; expected one of {SCENARIOS}")
    if n_train < 1 or n_test < 1:
        raise ValueError("n_train and n_test must be >= 1")
    code = _CODES[scenario]
    truth_rng = make_rng(seed, code, 0)
    data_rng = make_rng(seed, code, 1)
    n = n_train + n_test
    if scenario == "3":
        x_model, beta, cov = scenario3_truth(truth_rng)
        x, _ = sample_factor_model(x_model, n, data_rng)
        y = x @ beta + np.sqrt(0.9) * data_rng.standard_normal(n)
        z, eta, model, sigma2 = np.column_stack([x, y]), None, x_model, 0.9
    else:
        if scenario == "1":
            model = scenario1_model(truth_rng)
        elif scenario == "2":
            model = scenario2_model(truth_rng)
        else:
            model = motivating_model()
        z, eta = sample_factor_model(model, n, data_rng)
        cov = implied_covariance(model)
        reg = induced_regression(model)
        beta, sigma2 = reg.beta, reg.sigma2
    p = z.shape[1] - 1
    cols = _columns(p)
    train = Dataset(z[:n_train, :p], z[:n_train, p], cols, "y")
    test = Dataset(z[n_train:, :p], z[n_train:, p], cols, "y")
    return SimulatedData(scenario, seed, train, test, cov, model, np.asarray(beta), float(sigma2),
                         None if eta is None else eta[:n_train],
                         None if eta is None else eta[n_train:])
