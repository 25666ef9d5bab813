"""Targeted empirical-Bayes choice of the response idiosyncratic variance.

The response variance is picked from a grid by K-fold cross-validated
predictive MSE of y given x. Each (grid value, fold) cell is an independent
fixed-variance chain; cell seeds are keyed by the grid value and by the
held-out rows (not by positions or labels), so relabeling folds or taking a
sub-grid reproduces the same cells bit for bit.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .errors import (ConfigError, DimensionMismatch, EmptyInput, LengthMismatch, SamplerError,
                     TebfarError)
from .dataio import Dataset, apply_standardization, fit_standardization, unstandardize_predictions
from .gauss import make_rng
from .gibbs import SamplerConfig, run_chain

CV_ITERATIONS, CV_BURN_IN, CV_THIN = 2000, 1000, 5
JOBS_ENV = "TEBFAR_JOBS"


def derive_seed(seed, *keys) -> int:
    """Deterministic 63-bit seed for a sub-task keyed by ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def default_jobs() -> int:
    try:
        return max(1, int(os.environ.get(JOBS_ENV, "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class SigmaGrid:
    """Strictly increasing candidate response variances in (0, 1]."""

    values: tuple

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size == 0:
            raise ConfigError("sigma grid is empty")
        if np.any(v <= 0) or np.any(v > 1) or np.any(np.diff(v) <= 0):
            raise ConfigError("sigma grid must be strictly increasing within (0, 1]")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def linspace(cls, lo=0.01, hi=1.0, n=100) -> "SigmaGrid":
        return cls(tuple(np.round(np.linspace(lo, hi, int(n)), 12)))

    @classmethod
    def parse(cls, text: str) -> "SigmaGrid":
        """``"LO:HI:N"``, e.g. ``"0.01:1:100"``."""
        try:
            lo, hi, n = text.split(":")
            return cls.linspace(float(lo), float(hi), int(n))
        except ValueError as exc:
            raise ConfigError(f"bad grid spec {text!r}: {exc}") from None

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True)
class CvPlan:
    """Seeded assignment of rows to ``n_folds`` folds of near-equal size."""

    n_folds: int = 10
    seed: int = 0
    assignment: tuple | None = None

    def __post_init__(self):
        if self.n_folds < 2:
            raise ConfigError("need at least 2 folds")

    def assign(self, n: int) -> np.ndarray:
        if self.assignment is not None:
            a = np.asarray(self.assignment, dtype=int)
            if a.shape != (n,):
                raise DimensionMismatch(f"assignment has {a.size} rows, data has {n}")
            return a
        if n < self.n_folds:
            raise ConfigError(f"{n} rows cannot fill {self.n_folds} folds")
        perm = make_rng(self.seed).permutation(n)
        folds = np.empty(n, dtype=int)
        folds[perm] = np.arange(n) % self.n_folds
        return folds


def mse(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=float).ravel()
    actual = np.asarray(actual, dtype=float).ravel()
    if predicted.shape != actual.shape:
        raise LengthMismatch(f"{predicted.size} predictions for {actual.size} values")
    if predicted.size == 0:
        raise EmptyInput("cannot score empty vectors")
    return float(np.mean((predicted - actual) ** 2))


def predict(draws, x_new) -> np.ndarray:
    """Posterior-mean induced-regression predictions (standardized scale)."""
    x_new = np.asarray(x_new, dtype=float)
    if len(draws) == 0:
        raise EmptyInput("no posterior draws")
    if x_new.ndim == 1:
        x_new = x_new[None, :]
    if x_new.shape[1] != draws.p:
        raise DimensionMismatch(f"expected {draws.p} predictors, got {x_new.shape[1]}")
    return x_new @ draws.mean_beta()


def _cell_config(template, sigma_y2, seed):
    return replace(template, mode="tebfar", sigma_y2=float(sigma_y2), seed=seed)


def _value_key(v):
    return int(round(float(v) * 1e9))


def _run_cell(args):
    X, y, test, config, fold_key = args
    try:
        train = Dataset(X[~test], y[~test])
        params = fit_standardization(train)
        fitted = apply_standardization(params, train)
        draws = run_chain(fitted.X, fitted.y, config)
        held = apply_standardization(params, Dataset(X[test], y[test]))
        y_hat = unstandardize_predictions(params, predict(draws, held.X))
    except TebfarError as exc:
        raise SamplerError(f"CV cell sigma_y2={config.sigma_y2}, fold starting at row "
                           f"{fold_key} failed: {exc}", getattr(exc, "state", None)) from exc
    return mse(y_hat, y[test])


def cv_cell_config(**overrides):
    """Default chain settings for CV cells (shorter than final fits)."""
    kw = dict(iterations=CV_ITERATIONS, burn_in=CV_BURN_IN, thin=CV_THIN,
              mode="tebfar", sigma_y2=1.0)
    kw.update(overrides)
    return SamplerConfig(**kw)


def cv_select_sigma(data, grid: SigmaGrid, plan: CvPlan, sampler_config=None, jobs=None):
    """Choose the response variance minimizing K-fold CV MSE.

    Parameters
    ----------
    data : Dataset
        Standardized training data. Each fold is re-standardized on its own
        training complement; held-out MSE is measured on ``data``'s scale.
    grid : SigmaGrid
    plan : CvPlan
    sampler_config : SamplerConfig, optional
        Template for the cell chains (mode and sigma_y2 are overridden, its
        seed is the master seed). Defaults to :func:`cv_cell_config`.
    jobs : int, optional
        Worker processes; defaults to ``$TEBFAR_JOBS`` or 1.

    Returns
    -------
    sigma_hat : float
        Minimizer of the mean CV MSE, ties going to the larger value.
    curve : ndarray
        Mean CV MSE per grid value.
    """
    template = sampler_config if sampler_config is not None else cv_cell_config()
    values = np.asarray(grid, dtype=float)
    X, y = data.X, data.y
    folds = plan.assign(len(y))
    masks = [folds == f for f in np.unique(folds)]
    # a fold is identified by its first held-out row, not by its label
    masks.sort(key=lambda m: int(np.argmax(m)))
    fold_keys = [int(np.argmax(m)) for m in masks]
    tasks = []
    for v in values:
        for m, fk in zip(masks, fold_keys):
            seed = derive_seed(template.seed, _value_key(v), fk)
            tasks.append((X, y, m, _cell_config(template, v, seed), fk))
    jobs = default_jobs() if jobs is None else jobs
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            scores = list(ex.map(_run_cell, tasks, chunksize=max(1, len(tasks) // (4 * jobs))))
    else:
        scores = [_run_cell(t) for t in tasks]
    scores = np.asarray(scores).reshape(len(values), len(masks))
    curve = scores.mean(axis=1)
    m = curve.min()
    best = int(np.nonzero(curve <= m)[0].max())
    return float(values[best]), curve


@dataclass
class TebfarFit:
    """Result of :func:`fit_tebfar`: the final chain plus the selection trace."""

    draws: object
    sigma_hat: float
    grid: SigmaGrid
    curve: np.ndarray

    def curve_rows(self):
        return list(zip(self.grid.values, (float(c) for c in self.curve)))


def write_curve(path, grid, curve) -> None:
    """Two-column CSV ``sigma_y2, mean_cv_mse``."""
    import csv

    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["sigma_y2", "mean_cv_mse"])
        for v, c in zip(np.asarray(grid, dtype=float), curve):
            w.writerow([repr(float(v)), repr(float(c))])


def fit_tebfar(data, grid=None, plan=None, cv_config=None, final_config=None, jobs=None):
    """Select the response variance by CV, then refit on all of ``data``.

    ``data`` must already be standardized. The final chain uses
    ``final_config`` (full sampler defaults unless given) with the selected
    variance fixed; its seed is taken as the master seed for the CV cells
    unless ``cv_config`` carries its own.
    """
    grid = SigmaGrid.linspace() if grid is None else grid
    plan = CvPlan() if plan is None else plan
    final_config = SamplerConfig(sigma_y2=1.0) if final_config is None else final_config
    if cv_config is None:
        cv_config = cv_cell_config(seed=final_config.seed, k_max=final_config.k_max,
                                   hyper=final_config.hyper)
    sigma_hat, curve = cv_select_sigma(data, grid, plan, cv_config, jobs=jobs)
    final = replace(final_config, mode="tebfar", sigma_y2=sigma_hat)
    draws = run_chain(data.X, data.y, final)
    return TebfarFit(draws, sigma_hat, grid, curve)
