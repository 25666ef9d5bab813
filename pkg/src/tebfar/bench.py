"""Method x training-size x seed benchmark driver.

Each cell draws (or splits) its data, standardizes on the training part,
fits one method and scores test MSE on the original response scale. Cells
are independent and seeded by ``(seed, method, ntrain)``, so the results do
not depend on the worker count or completion order.
"""
from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import baselines
from .dataio import Dataset, apply_standardization, fit_standardization, split, unstandardize_predictions
from .gibbs import SamplerConfig, run_chain
from .select import CvPlan, SigmaGrid, cv_cell_config, default_jobs, derive_seed, fit_tebfar, mse, predict
from .simulate import simulate

METHODS = ("tebfar-cv", "jbfm", "lasso-cv", "ridge-cv", "ols")
_METHOD_CODES = {m: i + 1 for i, m in enumerate(METHODS)}


@dataclass(frozen=True)
class BenchProtocol:
    """Tuning and chain settings shared by all cells."""

    grid: SigmaGrid = field(default_factory=SigmaGrid.linspace)
    cv_folds: int = 10
    cv_iterations: int = 2000
    cv_burn_in: int = 1000
    cv_thin: int = 5
    iterations: int = 5000
    burn_in: int = 2500
    thin: int = 5
    k_max: int | None = None


@dataclass(frozen=True)
class ScenarioSource:
    """Fresh simulated train/test data per (ntrain, seed)."""

    scenario: str
    n_test: int

    def __call__(self, ntrain, seed):
        sim = simulate(self.scenario, ntrain, self.n_test, seed)
        return sim.train, sim.test


@dataclass(frozen=True)
class SplitSource:
    """Random train/test partitions of a fixed dataset."""

    data: Dataset

    def __call__(self, ntrain, seed):
        return split(self.data, ntrain, seed)


def fit_predict(method, train: Dataset, test: Dataset, seed: int, protocol: BenchProtocol):
    """Fit ``method`` on ``train`` and return original-scale predictions for ``test``."""
    params = fit_standardization(train)
    tr = apply_standardization(params, train)
    te = apply_standardization(params, test)
    plan = CvPlan(protocol.cv_folds, derive_seed(seed, 0))
    final = dict(iterations=protocol.iterations, burn_in=protocol.burn_in, thin=protocol.thin,
                 k_max=protocol.k_max, seed=seed)
    if method == "tebfar-cv":
        cv = cv_cell_config(iterations=protocol.cv_iterations, burn_in=protocol.cv_burn_in,
                            thin=protocol.cv_thin, k_max=protocol.k_max, seed=seed)
        fit = fit_tebfar(tr, protocol.grid, plan, cv, SamplerConfig(sigma_y2=1.0, **final), jobs=1)
        y_hat = predict(fit.draws, te.X)
    elif method == "jbfm":
        draws = run_chain(tr.X, tr.y, SamplerConfig(mode="jbfm", **final))
        y_hat = predict(draws, te.X)
    elif method == "lasso-cv":
        beta, _ = baselines.lasso_cv(tr.X, tr.y, plan)
        y_hat = te.X @ beta
    elif method == "ridge-cv":
        beta, _ = baselines.ridge_cv(tr.X, tr.y, plan)
        y_hat = te.X @ beta
    elif method == "ols":
        y_hat = te.X @ baselines.ols_fit(tr.X, tr.y)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    return unstandardize_predictions(params, y_hat)


def _run_cell(args):
    method, ntrain, seed, source, protocol = args
    train, test = source(ntrain, seed)
    cell_seed = derive_seed(seed, _METHOD_CODES[method], ntrain)
    y_hat = fit_predict(method, train, test, cell_seed, protocol)
    return {"method": method, "ntrain": int(ntrain), "seed": int(seed), "mse": mse(y_hat, test.y)}


def run_bench(methods, ntrains, seeds, source, protocol=None, jobs=None):
    """Run every (method, ntrain, seed) cell.

    Returns result rows in canonical order: methods as given, then ntrain
    and seed ascending.
    """
    protocol = BenchProtocol() if protocol is None else protocol
    for m in methods:
        if m not in _METHOD_CODES:
            raise ValueError(f"unknown method {m!r}; expected one of {METHODS}")
    tasks = [(m, n, s, source, protocol) for m in methods
             for n in sorted(ntrains) for s in sorted(seeds)]
    jobs = default_jobs() if jobs is None else jobs
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            return list(ex.map(_run_cell, tasks))
    return [_run_cell(t) for t in tasks]


def pivot_means(rows):
    """Mean MSE per (ntrain, method): ``(ntrains, methods, table)``."""
    methods = list(dict.fromkeys(r["method"] for r in rows))
    ntrains = sorted({r["ntrain"] for r in rows})
    table = np.full((len(ntrains), len(methods)), np.nan)
    for i, n in enumerate(ntrains):
        for j, m in enumerate(methods):
            vals = [r["mse"] for r in rows if r["ntrain"] == n and r["method"] == m]
            if vals:
                table[i, j] = np.mean(vals)
    return ntrains, methods, table


def write_pivot(path, rows) -> None:
    """Rows are training sizes, columns methods, cells mean test MSE."""
    ntrains, methods, table = pivot_means(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["ntrain"] + methods)
        for n, vals in zip(ntrains, table):
            w.writerow([n] + [repr(float(v)) for v in vals])
