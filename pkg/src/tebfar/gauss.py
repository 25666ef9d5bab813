"""Mean-zero multivariate Gaussian kernels.

Everything here is a pure function of its arguments. Random draws take an
explicit ``numpy.random.Generator``; use :func:`make_rng` to derive
independent, reproducible substreams from a master seed.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg

from .errors import DimensionMismatch, NotPositiveDefinite

LOG_2PI = np.log(2.0 * np.pi)


def make_rng(seed, *keys) -> np.random.Generator:
    """Counter-based (Philox) generator keyed by ``(seed, *keys)``.

    Distinct key tuples give statistically independent streams, so parallel
    jobs can derive their own stream from (master seed, task index) without
    coordination.
    """
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [int(k) for k in keys]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def as_symmetric(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=float)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise DimensionMismatch(f"{name} must be square, got shape {m.shape}")
    tol = 1e-12 * np.maximum(1.0, np.abs(m))
    if np.any(np.abs(m - m.T) > tol):
        raise ValueError(f"{name} is not symmetric")
    return m


def cholesky(m) -> np.ndarray:
    """Lower Cholesky factor ``L`` with ``L @ L.T == m``.

    Raises
    ------
    NotPositiveDefinite
        If any pivot ``L[i, i]**2`` is at or below
        ``dim * 1e-14 * max(diag(m))``.
    """
    m = as_symmetric(m)
    d = m.shape[0]
    floor = d * 1e-14 * max(float(np.max(np.diag(m))), 0.0)
    try:
        L = np.linalg.cholesky(m)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("matrix is not positive definite") from exc
    pivots = np.diag(L) ** 2
    if not np.all(np.isfinite(pivots)) or np.any(pivots <= floor):
        raise NotPositiveDefinite(
            f"smallest Cholesky pivot {pivots.min():.3e} is at or below {floor:.3e}"
        )
    return L


def _logdet_from_chol(L):
    return 2.0 * np.sum(np.log(np.diag(L)))


def mvn_sample(mean, cov, rng: np.random.Generator) -> np.ndarray:
    """One draw ``mean + L z`` with ``z`` standard normal from ``rng``."""
    mean = np.asarray(mean, dtype=float)
    L = cholesky(cov)
    if mean.shape != (L.shape[0],):
        raise DimensionMismatch("mean and cov dimensions differ")
    return mean + L @ rng.standard_normal(L.shape[0])


def gaussian_logpdf(z, cov) -> float | np.ndarray:
    """Log density of N(0, cov) at ``z``.

    ``z`` may be a single vector or an ``(n, d)`` array of rows, in which case
    one value per row is returned.
    """
    L = cholesky(cov)
    z = np.asarray(z, dtype=float)
    d = L.shape[0]
    if z.shape[-1] != d:
        raise DimensionMismatch(f"expected vectors of length {d}, got {z.shape}")
    w = linalg.solve_triangular(L, z.T, lower=True)
    quad = np.sum(w * w, axis=0)
    return -0.5 * (d * LOG_2PI + _logdet_from_chol(L) + quad)


def kl_gaussian(s0, s1) -> float:
    """KL(N(0, s0) || N(0, s1))."""
    L0 = cholesky(s0)
    L1 = cholesky(s1)
    if L0.shape != L1.shape:
        raise DimensionMismatch("covariances have different dimensions")
    d = L0.shape[0]
    # tr(s1^-1 s0) = ||L1^-1 L0||_F^2
    A = linalg.solve_triangular(L1, L0, lower=True)
    value = 0.5 * (np.sum(A * A) - d + _logdet_from_chol(L1) - _logdet_from_chol(L0))
    return max(float(value), 0.0)


def conditional_regression(joint_cov, response_index: int):
    """Regression of one coordinate on the rest under N(0, joint_cov).

    Returns
    -------
    beta : ndarray of shape (d - 1,)
        ``Omega_xx^{-1} Omega_xy``, ordered as the remaining coordinates.
    sigma2 : float
        Conditional variance ``Omega_yy - Omega_yx Omega_xx^{-1} Omega_xy``.
    """
    omega = as_symmetric(joint_cov, "joint_cov")
    d = omega.shape[0]
    if not 0 <= response_index < d:
        raise IndexError(f"response_index {response_index} out of range for dim {d}")
    keep = np.arange(d) != response_index
    oxx = omega[np.ix_(keep, keep)]
    oxy = omega[keep, response_index]
    L = cholesky(oxx)
    beta = linalg.cho_solve((L, True), oxy)
    sigma2 = float(omega[response_index, response_index] - oxy @ beta)
    if not sigma2 > 0:
        raise NotPositiveDefinite("conditional variance is not positive")
    return beta, sigma2
