"""KL-optimal low-rank plus diagonal approximations of a Gaussian.

Minimizing KL(N(0, S0) || N(0, Lambda Lambda^T + Psi)) over the factor family
is maximum-likelihood factor analysis with ``S0`` standing in for the sample
covariance, so the fit is the classical factor-analysis EM recursion. An
optional constraint holds the response (last) entry of ``Psi`` fixed; its
M-step update is simply skipped, which keeps EM monotone because the diagonal
M-step decouples across entries.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from . import gauss
from .errors import DimensionMismatch, LengthMismatch
from .model import FactorModel, implied_covariance, induced_regression

PSI_FLOOR = 1e-10


def default_grid() -> np.ndarray:
    """0.005, 0.010, ..., 1.200."""
    return np.round(0.005 * np.arange(1, 241), 10)


def _value_key(v: float) -> int:
    return int(round(float(v) * 1e9))


def _initial_points(s0, k, fixed_y_var, n_restarts, seed, stream_key):
    d = s0.shape[0]
    psi0 = 0.5 * np.diag(s0).copy()
    if fixed_y_var is not None:
        psi0[-1] = fixed_y_var
    w, V = np.linalg.eigh(s0 - np.diag(psi0))
    order = np.argsort(w)[::-1]
    w, V = w[order], V[:, order]
    scale = np.sqrt(np.abs(w))
    lams, psis = [], []
    for r in range(n_restarts):
        # restart r swaps the last eigen-direction for the (k-1+r)-th one so
        # the restarts visit basins attached to weaker eigenvectors too
        cols = list(range(k - 1)) + [k - 1 + (r % (d - k + 1))]
        lam = V[:, cols] * scale[cols]
        if r > 0:
            lam = lam + make_jitter(seed, stream_key, r, lam.shape)
        lams.append(lam)
        psis.append(psi0.copy())
    return lams, psis


def make_jitter(seed, stream_key, r, shape):
    return gauss.make_rng(seed, stream_key, r).normal(0.0, np.sqrt(0.1), size=shape)


def _kl_terms(s0, lam, psi):
    """Batched KL and the E-step quantities via the Woodbury identity."""
    R, d, k = lam.shape
    scaled = lam / psi[:, :, None]
    ginv = np.swapaxes(lam, 1, 2) @ scaled
    ginv[:, np.arange(k), np.arange(k)] += 1.0
    G = np.linalg.inv(ginv)
    s0_scaled = s0 @ scaled                                   # (R, d, k)
    logdet1 = np.sum(np.log(psi), axis=1) + np.linalg.slogdet(ginv)[1]
    tr = (np.einsum("j,rj->r", np.diag(s0), 1.0 / psi)
          - np.einsum("rlm,rml->r", G, np.swapaxes(scaled, 1, 2) @ s0_scaled))
    kl = 0.5 * (tr - d + logdet1 - _logdet0(s0))
    return kl, G, scaled, s0_scaled


_LOGDET_CACHE: dict = {}


def _logdet0(s0):
    key = (s0.shape, s0.tobytes())
    v = _LOGDET_CACHE.get(key)
    if v is None:
        if len(_LOGDET_CACHE) > 64:
            _LOGDET_CACHE.clear()
        v = _LOGDET_CACHE[key] = float(np.linalg.slogdet(s0)[1])
    return v


def _kl_terms_rank1(s0, lam, psi):
    scaled = lam / psi                                        # (R, d)
    ginv = 1.0 + np.einsum("rj,rj->r", lam, scaled)
    G = 1.0 / ginv
    s0_scaled = scaled @ s0
    logdet1 = np.sum(np.log(psi), axis=1) + np.log(ginv)
    tr = (1.0 / psi) @ np.diag(s0) - G * np.einsum("rj,rj->r", scaled, s0_scaled)
    kl = 0.5 * (tr - s0.shape[0] + logdet1 - _logdet0(s0))
    return kl, G, scaled, s0_scaled


def _m_step(diag0, G, scaled, s0_scaled):
    # B = G Lambda^T Psi^-1, so B S0 = G (S0 scaled)^T and B S0 B^T = BS scaled G
    BS = G @ np.swapaxes(s0_scaled, 1, 2)                     # (R, k, d)
    M = G + BS @ scaled @ G
    new_lam = np.swapaxes(BS, 1, 2) @ np.linalg.inv(M)
    new_psi = diag0 - np.einsum("rjl,rlj->rj", new_lam, BS)
    return new_lam, new_psi


def _m_step_rank1(diag0, G, scaled, s0_scaled):
    BS = G[:, None] * s0_scaled                               # (R, d)
    M = G + G * np.einsum("rj,rj->r", BS, scaled)
    new_lam = BS / M[:, None]
    return new_lam, diag0 - new_lam * BS


def em_fit_batch(s0, lam, psi, fixed_y_var=None, tol=1e-10, max_iter=10_000, history=False):
    """Run factor-analysis EM from a batch of starting points.

    Parameters
    ----------
    s0 : ndarray (d, d)
    lam : ndarray (R, d, k)
    psi : ndarray (R, d)
    fixed_y_var : float, optional
        Value the last entry of ``psi`` is held at.

    Returns
    -------
    lam, psi, kl, n_iter[, traces]
        Final parameters per start, their KL and iteration counts. With
        ``history=True`` also the per-iteration KL trace of each start.
    """
    lam = np.array(lam, dtype=float)
    psi = np.array(psi, dtype=float)
    R, d, k = lam.shape
    if fixed_y_var is not None:
        psi[:, -1] = fixed_y_var
    rank1 = k == 1
    if rank1:
        lam = lam[:, :, 0]
        kl_terms, m_step = _kl_terms_rank1, _m_step_rank1
    else:
        kl_terms, m_step = _kl_terms, _m_step
    diag0 = np.diag(s0)
    active = np.arange(R)
    prev = np.full(R, np.inf)
    kl_out = np.full(R, np.nan)
    iters = np.zeros(R, dtype=int)
    traces = [[] for _ in range(R)] if history else None
    for it in range(max_iter + 1):
        kl, G, scaled, s0_scaled = kl_terms(s0, lam[active], psi[active])
        kl_out[active] = kl
        if history:
            for i, r in enumerate(active):
                traces[r].append(kl[i])
        done = (prev[active] - kl) < tol
        iters[active] = it
        prev[active] = kl
        if it == max_iter:
            break
        keep = ~done
        if not keep.any():
            break
        if not keep.all():
            active = active[keep]
            G, scaled, s0_scaled = G[keep], scaled[keep], s0_scaled[keep]
        new_lam, new_psi = m_step(diag0, G, scaled, s0_scaled)
        new_psi = np.maximum(new_psi, PSI_FLOOR)
        if fixed_y_var is not None:
            new_psi[:, -1] = fixed_y_var
        lam[active] = new_lam
        psi[active] = new_psi
    if rank1:
        lam = lam[:, :, None]
    if history:
        return lam, psi, kl_out, iters, traces
    return lam, psi, kl_out, iters


def population_em_fit(s0, k: int, fixed_y_var=None, n_restarts: int = 10, seed: int = 0,
                      tol: float = 1e-10, max_iter: int = 10_000, init=None,
                      stream_key: int = 0):
    """KL-optimal rank-``k`` plus diagonal approximation of ``N(0, s0)``.

    The last coordinate is the response; ``fixed_y_var`` pins its
    idiosyncratic variance. ``init`` is an optional extra starting point
    ``(loadings, sigma_diag)``, tried after the ``n_restarts`` eigen-based
    starts. The lowest-KL start wins, ties going to the earlier start.

    Returns
    -------
    model : FactorModel
    kl : float
    """
    s0 = gauss.as_symmetric(s0, "s0")
    gauss.cholesky(s0)
    d = s0.shape[0]
    if not 1 <= k < d:
        raise ValueError(f"need 1 <= k < {d}, got {k}")
    if fixed_y_var is not None and not fixed_y_var > 0:
        raise ValueError("fixed_y_var must be positive")
    lams, psis = _initial_points(s0, k, fixed_y_var, n_restarts, seed, stream_key)
    if init is not None:
        lams.append(np.asarray(init[0], dtype=float).reshape(d, k))
        psis.append(np.maximum(np.asarray(init[1], dtype=float), PSI_FLOOR))
    lam, psi, kl, _ = em_fit_batch(s0, np.stack(lams), np.stack(psis), fixed_y_var,
                                   tol=tol, max_iter=max_iter)
    best = int(np.argmin(kl))
    model = FactorModel(lam[best], psi[best], y_variance_fixed=fixed_y_var is not None)
    return model, gauss.kl_gaussian(s0, implied_covariance(model))


def loading_distance(a, b) -> float:
    """Sign-aligned squared distance ``min(|a - b|^2, |a + b|^2)``."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if a.shape != b.shape:
        raise LengthMismatch(f"lengths differ: {a.size} vs {b.size}")
    return float(min(np.sum((a - b) ** 2), np.sum((a + b) ** 2)))


def expected_loglik_split(model: FactorModel, s0):
    """Per-observation expected log-likelihoods under ``N(0, s0)``.

    Returns ``(joint, x, y_given_x)`` for the Gaussian implied by ``model``;
    ``joint == x + y_given_x`` up to rounding.
    """
    s0 = np.asarray(s0, dtype=float)
    omega = implied_covariance(model)
    if omega.shape != s0.shape:
        raise DimensionMismatch("model and s0 dimensions differ")

    def ell(cov, target):
        L = gauss.cholesky(cov)
        A = np.linalg.solve(L, np.linalg.solve(L, target).T)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return -0.5 * (cov.shape[0] * gauss.LOG_2PI + logdet + np.trace(A))

    joint = ell(omega, s0)
    x = ell(omega[:-1, :-1], s0[:-1, :-1])
    reg = induced_regression(model)
    b = reg.beta
    q = s0[-1, -1] - 2.0 * b @ s0[:-1, -1] + b @ s0[:-1, :-1] @ b
    yx = -0.5 * (gauss.LOG_2PI + np.log(reg.sigma2) + q / reg.sigma2)
    return float(joint), float(x), float(yx)


def monte_carlo_loglik_split(model: FactorModel, s0, n: int, rng):
    """Average log-likelihoods over ``n`` draws from ``N(0, s0)``.

    Cross-check for :func:`expected_loglik_split`.
    """
    from .model import loglik_split

    L = gauss.cholesky(s0)
    z = rng.standard_normal((n, L.shape[0])) @ L.T
    joint, x, yx = loglik_split(model, z)
    return joint / n, x / n, yx / n


@dataclass
class KlScanResult:
    """Fits along a grid of fixed response variances.

    ``distances[i, j]`` is the sign-aligned squared distance from the fitted
    loadings at grid point ``i`` to column ``j`` of the reference loadings
    (meaningful for k = 1).
    """

    sigma_y2: np.ndarray
    models: list
    kl: np.ndarray
    distances: np.ndarray
    ell_joint: np.ndarray
    ell_x: np.ndarray
    ell_y_given_x: np.ndarray

    def __len__(self):
        return len(self.sigma_y2)

    def crossings(self, a: int = 0, b: int = 1) -> np.ndarray:
        """Grid indices ``i`` where ``dist_a - dist_b`` changes sign between i and i+1."""
        diff = self.distances[:, a] - self.distances[:, b]
        s = np.sign(diff)
        return np.nonzero(s[:-1] * s[1:] < 0)[0]

    def columns(self):
        m = self.distances.shape[1]
        return (["sigma_y2", "kl"] + [f"dist_col_{j + 1}" for j in range(m)]
                + ["ell_joint", "ell_x", "ell_y_given_x"])

    def rows(self):
        for i in range(len(self)):
            yield ([self.sigma_y2[i], self.kl[i]] + list(self.distances[i])
                   + [self.ell_joint[i], self.ell_x[i], self.ell_y_given_x[i]])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.columns())
            for row in self.rows():
                w.writerow([repr(float(v)) for v in row])


def scan_sigma_grid(s0, true_lambda, k: int = 1, grid=None, n_restarts: int = 10,
                    seed: int = 0, tol: float = 1e-10, max_iter: int = 10_000,
                    warm_start: bool = True) -> KlScanResult:
    """Constrained KL-optimal fits at each fixed response variance in ``grid``.

    Each point is fit from fresh eigen-based restarts, plus (by default) a
    warm start at the previous point's solution. Restart streams are keyed by
    the grid value, so adding grid points leaves the restarts at existing
    points unchanged; with ``warm_start=False`` the results at existing
    points are then bit-identical, while with warm starts only the attained
    optimum is (the warm start may land on a different, equally good point).
    """
    s0 = gauss.as_symmetric(s0, "s0")
    grid = default_grid() if grid is None else np.asarray(grid, dtype=float)
    if np.any(grid <= 0):
        raise ValueError("grid values must be positive")
    true_lambda = np.asarray(true_lambda, dtype=float)
    if true_lambda.ndim == 1:
        true_lambda = true_lambda[:, None]
    models, kls, dists, ells = [], [], [], []
    prev = None
    for v in grid:
        model, kl = population_em_fit(s0, k, fixed_y_var=float(v), n_restarts=n_restarts,
                                      seed=seed, tol=tol, max_iter=max_iter, init=prev,
                                      stream_key=_value_key(v))
        if warm_start:
            prev = (model.loadings, model.sigma_diag)
        models.append(model)
        kls.append(kl)
        dists.append([loading_distance(model.loadings[:, 0], true_lambda[:, j])
                      for j in range(true_lambda.shape[1])])
        ells.append(expected_loglik_split(model, s0))
    ells = np.asarray(ells)
    return KlScanResult(grid.copy(), models, np.asarray(kls), np.asarray(dists),
                        ells[:, 0], ells[:, 1], ells[:, 2])
