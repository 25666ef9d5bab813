"""Competitor regressors: OLS, ridge and lasso, with K-fold tuning.

All fitters expect centered (standardized) inputs and fit no intercept.
Penalties live on the ``(1/2n)`` loss scale, so a grid transfers across
sample sizes.
"""
from __future__ import annotations

import warnings

import numpy as np
from scipy import linalg

from .errors import EmptyInput, MaxIterationsWarning, RankDeficient
from .select import CvPlan, mse


def ols_fit(X, y) -> np.ndarray:
    """Least squares via a pivot-free QR; rank is checked on ``R``'s diagonal."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    if n <= p:
        raise RankDeficient(f"need n > p for OLS, got n={n}, p={p}")
    Q, R = linalg.qr(X, mode="economic")
    d = np.abs(np.diag(R))
    if d.min() <= max(n, p) * np.finfo(float).eps * d.max():
        raise RankDeficient("design matrix is rank deficient")
    return linalg.solve_triangular(R, Q.T @ y)


def ridge_fit(X, y, penalty: float) -> np.ndarray:
    """``(X^T X + n * penalty * I)^-1 X^T y``."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if penalty < 0:
        raise ValueError("penalty must be >= 0")
    n, p = X.shape
    if penalty == 0:
        return ols_fit(X, y)
    A = X.T @ X
    A[np.diag_indices(p)] += n * penalty
    return linalg.cho_solve(linalg.cho_factor(A, lower=True), X.T @ y)


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def _lasso_objective(gram, xty, penalty, b):
    return 0.5 * b @ gram @ b - xty @ b + penalty * np.sum(np.abs(b))


def _kkt_ok(gram, xty, penalty, b, tol):
    grad = xty - gram @ b
    on = b != 0
    return (np.all(np.abs(grad[on] - penalty * np.sign(b[on])) <= tol)
            and np.all(np.abs(grad[~on]) <= penalty + tol))


def _feature_sign(gram, xty, penalty, beta, tol, max_steps=None):
    """Active-set (feature-sign) search started from ``beta``.

    Each step solves the smooth problem on the active set with signs held
    fixed, then line-searches to the best sign-change point. Terminates in
    finitely many steps; returns None if a subproblem is singular or the
    step budget runs out.
    """
    p = beta.size
    max_steps = 10 * p + 10 if max_steps is None else max_steps
    x = beta.copy()
    theta = np.sign(x)
    active = x != 0
    for _ in range(max_steps):
        grad = xty - gram @ x
        zero = ~active
        if np.any(zero):
            viol = np.where(zero, np.abs(grad), -np.inf)
            i = int(np.argmax(viol))
            if viol[i] > penalty + tol:
                active[i] = True
                theta[i] = np.sign(grad[i])
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            return x
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("error", linalg.LinAlgWarning)
                sol = linalg.solve(gram[np.ix_(idx, idx)], xty[idx] - penalty * theta[idx],
                                   assume_a="pos")
        except (linalg.LinAlgError, linalg.LinAlgWarning, ValueError):
            return None
        target = x.copy()
        target[idx] = sol
        cur = x[idx]
        step = sol - cur
        with np.errstate(divide="ignore", invalid="ignore"):
            ts = -cur / step
        ts = ts[(ts > 0) & (ts < 1) & np.isfinite(ts)]
        best, best_f = target, _lasso_objective(gram, xty, penalty, target)
        for t in ts:
            cand = x.copy()
            cand[idx] = cur + t * step
            j = idx[np.argmin(np.abs(cand[idx]))]
            cand[j] = 0.0
            f = _lasso_objective(gram, xty, penalty, cand)
            if f < best_f:
                best, best_f = cand, f
        x = best
        active = x != 0
        theta = np.sign(x)
        if _kkt_ok(gram, xty, penalty, x, tol):
            return x
    return None


def lasso_fit(X, y, penalty: float, tol: float = 1e-8, max_sweeps: int = 100_000,
              beta0=None) -> np.ndarray:
    """Cyclic coordinate descent for ``(1/2n)|y - X b|^2 + penalty * |b|_1``.

    Uses covariance updates (Gram matrix precomputed), so a sweep costs
    O(p^2) regardless of n. On strongly correlated designs coordinate descent
    crawls, so after sweeps 1, 2, 4, 8, ... the iterate seeds a feature-sign
    active-set search, whose answer is accepted only if it satisfies the KKT
    conditions to ``tol``.
    Otherwise iteration stops when the largest coordinate change in a sweep is
    below ``tol``. If ``max_sweeps`` is hit a :class:`MaxIterationsWarning`
    is issued and the current iterate returned.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if not penalty > 0:
        raise ValueError("lasso penalty must be > 0")
    n, p = X.shape
    gram = X.T @ X / n
    xty = X.T @ y / n
    beta = np.zeros(p) if beta0 is None else np.array(beta0, dtype=float)
    if beta0 is None and np.max(np.abs(xty)) <= penalty:
        return beta
    # grad[j] = x_j^T r / n with r the current residual
    grad = xty - gram @ beta
    diag = np.diag(gram).copy()
    for sweep in range(1, max_sweeps + 1):
        biggest = 0.0
        for j in range(p):
            if diag[j] == 0.0:
                continue
            old = beta[j]
            rho = grad[j] + diag[j] * old
            new = np.sign(rho) * max(abs(rho) - penalty, 0.0) / diag[j]
            if new != old:
                grad -= gram[:, j] * (new - old)
                beta[j] = new
                biggest = max(biggest, abs(new - old))
        if biggest < tol:
            return beta
        if sweep & (sweep - 1) == 0:
            exact = _feature_sign(gram, xty, penalty, beta, tol)
            if exact is not None:
                return exact
    warnings.warn(f"lasso did not converge in {max_sweeps} sweeps", MaxIterationsWarning)
    return beta


def lasso_path(X, y, penalties, tol: float = 1e-8) -> np.ndarray:
    """Lasso solutions for each penalty, warm-started from large to small.

    Returns an array (len(penalties), p) in the order of ``penalties``.
    """
    penalties = np.asarray(penalties, dtype=float)
    order = np.argsort(-penalties)
    out = np.empty((penalties.size, np.asarray(X).shape[1]))
    beta = None
    for i in order:
        beta = lasso_fit(X, y, penalties[i], tol=tol, beta0=beta)
        out[i] = beta
    return out


def lasso_lambda_max(X, y) -> float:
    return float(np.max(np.abs(np.asarray(X).T @ np.asarray(y))) / len(y))


def lasso_grid(X, y, n: int = 50, ratio: float = 1e-3) -> np.ndarray:
    lmax = lasso_lambda_max(X, y)
    return np.geomspace(lmax * ratio, lmax, n)


def ridge_grid(n: int = 50) -> np.ndarray:
    return np.geomspace(1e-4, 10.0, n)


def cv_tune(fitter, X, y, grid, plan: CvPlan):
    """K-fold CV over a penalty grid.

    Returns ``(best_penalty, curve)`` where ``curve[i]`` is the mean held-out
    MSE at ``grid[i]``; ties go to the larger penalty.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise EmptyInput("penalty grid is empty")
    folds = plan.assign(len(y))
    curve = np.zeros(grid.size)
    for f in np.unique(folds):
        test = folds == f
        Xtr, ytr = X[~test], y[~test]
        if fitter is lasso_fit:
            betas = lasso_path(Xtr, ytr, grid)
        else:
            betas = [fitter(Xtr, ytr, lam) for lam in grid]
        for i, beta in enumerate(betas):
            curve[i] += mse(X[test] @ beta, y[test])
    curve /= len(np.unique(folds))
    best = _argmin_prefer_larger(grid, curve)
    return float(grid[best]), curve


def _argmin_prefer_larger(grid, curve):
    m = np.min(curve)
    ties = np.nonzero(curve <= m)[0]
    return int(ties[np.argmax(grid[ties])])


def lasso_cv(X, y, plan: CvPlan, grid=None):
    """Tune and refit the lasso on all of ``(X, y)``; returns ``(beta, penalty)``."""
    grid = lasso_grid(X, y) if grid is None else grid
    best, _ = cv_tune(lasso_fit, X, y, grid, plan)
    return lasso_fit(X, y, best), best


def ridge_cv(X, y, plan: CvPlan, grid=None):
    grid = ridge_grid() if grid is None else grid
    best, _ = cv_tune(ridge_fit, X, y, grid, plan)
    return ridge_fit(X, y, best), best
