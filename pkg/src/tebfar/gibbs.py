"""Blocked Gibbs sampler for the joint factor model under an MGP prior.

Two modes share one sweep:

* ``tebfar``: the response idiosyncratic variance is held at a supplied value
  and never resampled.
* ``jbfm``: it is sampled like every other idiosyncratic variance.

A sweep updates, in order: factor scores, loadings, idiosyncratic variances,
local precisions, column multipliers.
"""
from __future__ import annotations

import csv
import json
import math
import os
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.linalg import lapack

from .errors import ConfigError, DimensionMismatch, SamplerError
from .gauss import make_rng
from .model import FactorModel, MgpHyperparams, batch_induced_regression, InducedRegression

VARIANCE_FLOOR = 1e-12
MODES = ("tebfar", "jbfm")


def default_k_max(p: int) -> int:
    return max(1, min(p + 1, int(math.floor(5 + 2 * math.log(p + 1)))))


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 5
    k_max: int | None = None
    seed: int = 0
    mode: str = "tebfar"
    sigma_y2: float | None = None
    hyper: MgpHyperparams = field(default_factory=MgpHyperparams)

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {MODES}, got {self.mode!r}")
        if not 0 <= self.burn_in < self.iterations:
            raise ConfigError("need 0 <= burn_in < iterations")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")
        if self.k_max is not None and self.k_max < 1:
            raise ConfigError("k_max must be >= 1")
        if self.mode == "tebfar":
            if self.sigma_y2 is None or not (0 < self.sigma_y2 < math.inf):
                raise ConfigError("tebfar mode needs a finite sigma_y2 > 0")
        elif self.sigma_y2 is not None:
            raise ConfigError("jbfm mode samples sigma_y2; do not supply one")

    @property
    def n_retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin

    def resolve_k(self, p: int) -> int:
        return self.k_max if self.k_max is not None else default_k_max(p)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["hyper"] = asdict(self.hyper)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SamplerConfig":
        d = dict(d)
        d["hyper"] = MgpHyperparams(**d.get("hyper", {}))
        return cls(**d)


# Conditional updates. Each takes the current values as arrays, draws from
# ``rng`` and returns the new value; nothing is modified in place.

def _chol_inverse(prec):
    """Inverse of the lower Cholesky factor of a small SPD matrix."""
    L, info = lapack.dpotrf(prec, lower=1, clean=1)
    if info != 0:
        raise np.linalg.LinAlgError("factor precision is not positive definite")
    Linv, info = lapack.dtrtri(L, lower=1)
    return Linv


def update_factors(loadings, sigma_diag, data, rng):
    """Draw factor scores ``eta`` (n, k) given loadings and variances.

    Row i is N(V Lambda^T Sigma^-1 z_i, V) with V = (I + Lambda^T Sigma^-1 Lambda)^-1.
    """
    lam = loadings
    k = lam.shape[1]
    scaled = lam / sigma_diag[:, None]
    prec = lam.T @ scaled
    prec[np.diag_indices(k)] += 1.0
    Linv = _chol_inverse(prec)
    n = data.shape[0]
    # eta = (Linv^T (Linv b + eps))^T with b = Lambda^T Sigma^-1 z
    w = (data @ scaled) @ Linv.T
    w += rng.standard_normal((n, k))
    return w @ Linv


def update_loadings(eta, data, sigma_diag, xi, tau, rng, gram=None, cross=None):
    """Row-wise conjugate draw of the loadings.

    Row j is N(W_j eta^T z_j / s_j, W_j) with
    W_j = (diag(xi_j * tau) + eta^T eta / s_j)^-1. ``gram`` (eta^T eta) and
    ``cross`` (Z^T eta) may be passed in when already computed.
    """
    P = data.shape[1]
    k = eta.shape[1]
    if gram is None:
        gram = eta.T @ eta
    if cross is None:
        cross = data.T @ eta
    prec = np.multiply.outer(1.0 / sigma_diag, gram)
    idx = np.arange(k)
    prec[:, idx, idx] += xi * tau
    rhs = cross / sigma_diag[:, None]
    L = np.linalg.cholesky(prec)
    w = np.linalg.solve(L, rhs[..., None])
    w += rng.standard_normal((P, k, 1))
    return np.linalg.solve(np.swapaxes(L, 1, 2), w)[..., 0]


def update_idiosyncratic(loadings, eta, data, sigma_diag, hyper, rng, fix_response,
                         gram=None, cross=None, data_sq=None):
    """InverseGamma draws for the idiosyncratic variances.

    With ``fix_response`` the last (response) entry is carried over unchanged.
    When ``gram``, ``cross`` (Z^T eta) and ``data_sq`` (column sums of Z**2)
    are given the residual sums of squares are formed from them.
    """
    n = data.shape[0]
    if gram is None:
        resid = data - eta @ loadings.T
        ssr = np.einsum("ij,ij->j", resid, resid)
    else:
        ssr = (data_sq - 2.0 * np.einsum("jl,jl->j", loadings, cross)
               + np.einsum("jl,lm,jm->j", loadings, gram, loadings))
        ssr = np.maximum(ssr, 0.0)
    rate = hyper.sigma_rate + 0.5 * ssr
    g = rng.standard_gamma(hyper.sigma_shape + 0.5 * n, size=rate.shape)
    new = np.maximum(rate / g, VARIANCE_FLOOR)
    if fix_response:
        new[-1] = sigma_diag[-1]
    return new


def update_local_precisions(loadings, tau, hyper, rng):
    """Gamma(xi_shape + 1/2, xi_rate + tau_l lambda_jl^2 / 2) draws."""
    rate = hyper.xi_rate + 0.5 * tau * loadings**2
    return rng.standard_gamma(hyper.xi_shape + 0.5, size=rate.shape) / rate


def update_column_multipliers(loadings, xi, delta, hyper, rng):
    """Sequential Gamma draws of the column multipliers.

    Returns ``(delta, tau)``. Column h uses the current values of every other
    multiplier, so later columns see the already-updated earlier ones.
    """
    P, k = loadings.shape
    delta = np.array(delta, dtype=float)
    tau0 = np.cumprod(delta)
    col = np.einsum("jl,jl->l", xi, loadings**2)
    suffix = np.cumsum((tau0 * col)[::-1])[::-1]
    shapes = hyper.delta_shapes(k) + 0.5 * P * (k - np.arange(k))
    g = rng.standard_gamma(shapes)
    # every tau_l with l >= h has been rescaled by the product of
    # new/old ratios of the multipliers already updated
    ratio = 1.0
    for h in range(k):
        old = delta[h]
        rate = 1.0 + 0.5 * ratio * suffix[h] / old
        delta[h] = max(g[h] / rate, VARIANCE_FLOOR)
        ratio *= delta[h] / old
    return delta, np.cumprod(delta)


@dataclass
class PosteriorDraws:
    """Retained post-burn-in snapshots of one chain.

    Attributes
    ----------
    loadings : ndarray (S, p + 1, k)
    sigma_diag : ndarray (S, p + 1)
    beta : ndarray (S, p)
        Induced regression coefficients of each snapshot.
    sigma2 : ndarray (S,)
        Induced residual variance of each snapshot.
    """

    loadings: np.ndarray
    sigma_diag: np.ndarray
    beta: np.ndarray
    sigma2: np.ndarray
    config: SamplerConfig

    def __len__(self):
        return self.loadings.shape[0]

    @property
    def p(self) -> int:
        return self.loadings.shape[1] - 1

    def model(self, i: int) -> FactorModel:
        return FactorModel(self.loadings[i], self.sigma_diag[i],
                           y_variance_fixed=self.config.mode == "tebfar")

    def regression(self, i: int) -> InducedRegression:
        return InducedRegression(self.beta[i], float(self.sigma2[i]))

    def mean_beta(self) -> np.ndarray:
        return self.beta.mean(axis=0)

    def mean_covariance(self) -> np.ndarray:
        lam = self.loadings
        omega = np.einsum("sjl,sml->jm", lam, lam) / len(self)
        return omega + np.diag(self.sigma_diag.mean(axis=0))


def _initial_state(P, k, config, rng):
    hyper = config.hyper
    loadings = rng.standard_normal((P, k))
    xi = np.full((P, k), hyper.xi_shape / hyper.xi_rate)
    delta = hyper.delta_shapes(k).copy()
    sigma = np.ones(P)
    if config.mode == "tebfar":
        sigma[-1] = config.sigma_y2
    return loadings, sigma, xi, delta


def run_chain(X, y, config: SamplerConfig, init=None) -> PosteriorDraws:
    """Run one Gibbs chain on standardized predictors ``X`` and response ``y``.

    Parameters
    ----------
    X : ndarray (n, p)
    y : ndarray (n,)
    config : SamplerConfig
    init : tuple (FactorModel, MgpState), optional
        Starting values; by default loadings are N(0, 1), variances 1 and
        the shrinkage parameters sit at their prior means. In tebfar mode
        the response variance is always the configured value.

    Returns
    -------
    PosteriorDraws
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float).ravel()
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise DimensionMismatch(f"X {X.shape} and y {y.shape} are inconsistent")
    data = np.ascontiguousarray(np.column_stack([X, y]))
    n, P = data.shape
    data_t = np.ascontiguousarray(data.T)
    data_sq = np.einsum("ij,ij->j", data, data)
    k = config.resolve_k(P - 1)
    rng = make_rng(config.seed)
    hyper = config.hyper
    fixed = config.mode == "tebfar"

    loadings, sigma, xi, delta = _initial_state(P, k, config, rng)
    if init is not None:
        model, state = init
        if model.loadings.shape != (P, k) or state.xi.shape != (P, k):
            raise DimensionMismatch(f"initial state must have {P} rows and {k} columns")
        loadings = np.array(model.loadings)
        sigma = np.array(model.sigma_diag)
        if fixed:
            sigma[-1] = config.sigma_y2
        xi, delta = np.array(state.xi), np.array(state.delta)
    tau = np.cumprod(delta)
    S = config.n_retained
    keep_lam = np.empty((S, P, k))
    keep_sig = np.empty((S, P))
    s = 0
    for it in range(config.iterations):
        try:
            eta = update_factors(loadings, sigma, data, rng)
            gram = eta.T @ eta
            cross = data_t @ eta
            loadings = update_loadings(eta, data, sigma, xi, tau, rng, gram, cross)
            sigma = update_idiosyncratic(loadings, eta, data, sigma, hyper, rng, fixed,
                                         gram, cross, data_sq)
            xi = update_local_precisions(loadings, tau, hyper, rng)
            delta, tau = update_column_multipliers(loadings, xi, delta, hyper, rng)
        except np.linalg.LinAlgError as exc:
            state = {"iteration": it, "loadings": loadings, "sigma_diag": sigma,
                     "xi": xi, "delta": delta}
            raise SamplerError(f"numeric failure at iteration {it}: {exc}", state) from exc
        if it >= config.burn_in and (it - config.burn_in + 1) % config.thin == 0:
            keep_lam[s] = loadings
            keep_sig[s] = sigma
            s += 1
    beta, sigma2 = batch_induced_regression(keep_lam, keep_sig)
    return PosteriorDraws(keep_lam, keep_sig, beta, sigma2, config)


# On-disk format: a JSON manifest plus a flat CSV with one row per draw.

MANIFEST_NAME = "manifest.json"
DRAWS_NAME = "draws.csv"


def _draw_columns(p, k):
    cols = ["draw"]
    cols += [f"lambda_{j}_{l}" for j in range(p + 1) for l in range(k)]
    cols += [f"sigma_diag_{j}" for j in range(p + 1)]
    cols += [f"beta_{j}" for j in range(p)]
    cols.append("sigma2")
    return cols


def save_draws(directory, draws: PosteriorDraws, extra: dict | None = None) -> None:
    os.makedirs(directory, exist_ok=True)
    S, P, k = draws.loadings.shape
    manifest = {
        "format": "tebfar-draws/1",
        "config": draws.config.to_dict(),
        "seed": draws.config.seed,
        "retained": S,
        "p": P - 1,
        "k": k,
        "table": DRAWS_NAME,
        "columns": _draw_columns(P - 1, k),
    }
    if extra:
        manifest.update(extra)
    with open(os.path.join(directory, MANIFEST_NAME), "w") as fh:
        json.dump(manifest, fh, indent=2)
    table = np.column_stack([
        np.arange(S), draws.loadings.reshape(S, -1), draws.sigma_diag, draws.beta, draws.sigma2,
    ])
    with open(os.path.join(directory, DRAWS_NAME), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(manifest["columns"])
        for row in table:
            w.writerow([str(int(row[0]))] + [repr(float(v)) for v in row[1:]])


def load_draws(directory) -> PosteriorDraws:
    with open(os.path.join(directory, MANIFEST_NAME)) as fh:
        manifest = json.load(fh)
    P, k = manifest["p"] + 1, manifest["k"]
    table = np.loadtxt(os.path.join(directory, manifest["table"]), delimiter=",",
                       skiprows=1, ndmin=2)
    S = table.shape[0]
    a = 1
    lam = table[:, a:a + P * k].reshape(S, P, k)
    a += P * k
    sig = table[:, a:a + P]
    a += P
    beta = table[:, a:a + P - 1]
    sigma2 = table[:, a + P - 1]
    return PosteriorDraws(lam, sig, beta, sigma2, SamplerConfig.from_dict(manifest["config"]))


def with_overrides(config: SamplerConfig, **kw) -> SamplerConfig:
    return replace(config, **kw)
