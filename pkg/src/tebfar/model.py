"""Joint Gaussian factor model and its induced regression.

Variables are ordered predictors first, response last: a model with ``p``
predictors has ``p + 1`` rows of loadings, and row ``p`` holds the response
loadings.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import gauss
from .errors import ConfigError, DimensionMismatch


@dataclass(frozen=True)
class FactorModel:
    """Loadings plus diagonal idiosyncratic variances.

    Parameters
    ----------
    loadings : ndarray of shape (p + 1, k)
    sigma_diag : ndarray of shape (p + 1,)
        Idiosyncratic variances; the last entry is the response variance.
    y_variance_fixed : bool
        Whether the response variance is held fixed during estimation.
    """

    loadings: np.ndarray
    sigma_diag: np.ndarray
    y_variance_fixed: bool = False

    def __post_init__(self):
        lam = np.array(self.loadings, dtype=float)
        if lam.ndim == 1:
            lam = lam[:, None]
        sig = np.array(self.sigma_diag, dtype=float)
        if lam.ndim != 2 or sig.shape != (lam.shape[0],):
            raise DimensionMismatch(
                f"loadings {lam.shape} and sigma_diag {sig.shape} are inconsistent"
            )
        if lam.shape[0] < 2:
            raise DimensionMismatch("need at least one predictor and the response")
        if not np.all(np.isfinite(lam)):
            raise ValueError("loadings must be finite")
        if not np.all(sig > 0):
            raise ValueError("idiosyncratic variances must be positive")
        lam.flags.writeable = False
        sig.flags.writeable = False
        object.__setattr__(self, "loadings", lam)
        object.__setattr__(self, "sigma_diag", sig)

    @property
    def p(self) -> int:
        return self.loadings.shape[0] - 1

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    @property
    def sigma_y2(self) -> float:
        return float(self.sigma_diag[-1])

    def to_dict(self) -> dict:
        return {
            "p": self.p,
            "k": self.k,
            "lambda": self.loadings.tolist(),
            "sigma_diag": self.sigma_diag.tolist(),
            "y_variance_fixed": bool(self.y_variance_fixed),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FactorModel":
        m = cls(np.array(d["lambda"], dtype=float).reshape(d["p"] + 1, d["k"]),
                np.asarray(d["sigma_diag"], dtype=float),
                bool(d.get("y_variance_fixed", False)))
        return m


@dataclass(frozen=True)
class MgpHyperparams:
    """Hyperparameters of the multiplicative gamma process prior.

    ``a1``/``a_rest`` are the Gamma shapes of the first and later column
    multipliers (unit rate). Local precisions have a Gamma(xi_shape, xi_rate)
    prior, idiosyncratic variances an InverseGamma(sigma_shape, sigma_rate).
    """

    a1: float = 2.1
    a_rest: float = 3.1
    xi_shape: float = 1.5
    xi_rate: float = 1.5
    sigma_shape: float = 1.0
    sigma_rate: float = 0.3

    def __post_init__(self):
        for name in ("a1", "a_rest", "xi_shape", "xi_rate", "sigma_shape", "sigma_rate"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be strictly positive")

    def delta_shapes(self, k: int) -> np.ndarray:
        a = np.full(k, self.a_rest)
        a[0] = self.a1
        return a


@dataclass
class MgpState:
    """Local precisions ``xi`` (p + 1, k) and column multipliers ``delta`` (k,).

    ``tau`` is always the cumulative product of ``delta``.
    """

    xi: np.ndarray
    delta: np.ndarray
    tau: np.ndarray = field(init=False)

    def __post_init__(self):
        self.xi = np.asarray(self.xi, dtype=float)
        self.delta = np.asarray(self.delta, dtype=float)
        if self.xi.ndim != 2 or self.delta.shape != (self.xi.shape[1],):
            raise DimensionMismatch("xi and delta shapes are inconsistent")
        if not (np.all(self.xi > 0) and np.all(self.delta > 0)):
            raise ValueError("shrinkage parameters must be positive")
        self.tau = np.cumprod(self.delta)

    def to_dict(self) -> dict:
        return {"xi": self.xi.tolist(), "delta": self.delta.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "MgpState":
        return cls(np.asarray(d["xi"], dtype=float), np.asarray(d["delta"], dtype=float))


@dataclass(frozen=True)
class InducedRegression:
    beta: np.ndarray
    sigma2: float


def implied_covariance(m: FactorModel) -> np.ndarray:
    """``Lambda Lambda^T + diag(sigma_diag)``."""
    lam = m.loadings
    return lam @ lam.T + np.diag(m.sigma_diag)


def induced_regression(m: FactorModel) -> InducedRegression:
    """Conditional law of the response given the predictors."""
    beta, sigma2 = gauss.conditional_regression(implied_covariance(m), m.p)
    return InducedRegression(beta, sigma2)


def one_factor_regression(lam, sigma_x, gamma, sigma_y2) -> InducedRegression:
    """Closed-form induced regression of a single-factor model.

    ``lam`` and ``sigma_x`` are the predictor loadings and variances,
    ``gamma`` the response loading.
    """
    lam = np.asarray(lam, dtype=float)
    sigma_x = np.asarray(sigma_x, dtype=float)
    denom = 1.0 + np.sum(lam**2 / sigma_x)
    beta = gamma / denom * (lam / sigma_x)
    return InducedRegression(beta, float(sigma_y2 + gamma**2 / denom))


def batch_induced_regression(loadings, sigma_diag):
    """Induced regressions for a stack of models.

    Parameters
    ----------
    loadings : ndarray (S, p + 1, k)
    sigma_diag : ndarray (S, p + 1)

    Returns
    -------
    beta : ndarray (S, p)
    sigma2 : ndarray (S,)
    """
    lam = np.asarray(loadings, dtype=float)
    sig = np.asarray(sigma_diag, dtype=float)
    omega = lam @ np.swapaxes(lam, 1, 2)
    idx = np.arange(sig.shape[1])
    omega[:, idx, idx] += sig
    oxx = omega[:, :-1, :-1]
    oxy = omega[:, :-1, -1]
    L = np.linalg.cholesky(oxx)
    w = np.linalg.solve(L, oxy[..., None])
    beta = np.linalg.solve(np.swapaxes(L, 1, 2), w)[..., 0]
    sigma2 = omega[:, -1, -1] - np.sum(w[..., 0] ** 2, axis=1)
    return beta, sigma2


def loglik_split(m: FactorModel, data):
    """Joint, predictor-marginal and conditional log-likelihoods of ``data``.

    ``data`` has ``p + 1`` columns, predictors then response. By construction
    ``joint == x_marginal + y_given_x`` up to rounding.
    """
    data = np.asarray(data, dtype=float).reshape(-1, m.p + 1)
    if data.shape[0] == 0:
        return 0.0, 0.0, 0.0
    omega = implied_covariance(m)
    x, y = data[:, :-1], data[:, -1]
    joint = float(np.sum(gauss.gaussian_logpdf(data, omega)))
    xm = float(np.sum(gauss.gaussian_logpdf(x, omega[:-1, :-1])))
    reg = induced_regression(m)
    r = y - x @ reg.beta
    yx = float(np.sum(-0.5 * (gauss.LOG_2PI + np.log(reg.sigma2) + r**2 / reg.sigma2)))
    return joint, xm, yx


def save_model(path, model: FactorModel, state: MgpState | None = None) -> None:
    doc = model.to_dict()
    if state is not None:
        doc.update(state.to_dict())
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2)


def load_model(path):
    """Read a model JSON; returns ``(FactorModel, MgpState or None)``."""
    with open(path) as fh:
        doc = json.load(fh)
    state = MgpState.from_dict(doc) if "xi" in doc else None
    return FactorModel.from_dict(doc), state
