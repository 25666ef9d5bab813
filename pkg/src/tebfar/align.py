"""Resolving rotation, permutation and sign ambiguity of loadings.

Pipeline: varimax-rotate each loadings matrix, then greedily match its
columns to a reference by absolute correlation and flip signs so every
matched pair correlates positively. This is a simplification of full
posterior-alignment schemes, adequate for side-by-side column comparisons.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, EmptyInput


def varimax_criterion(lam) -> float:
    """Sum over columns of the variance of squared loadings."""
    sq = np.asarray(lam, dtype=float) ** 2
    return float(np.sum(np.mean(sq**2, axis=0) - np.mean(sq, axis=0) ** 2))


def varimax(lam, tol: float = 1e-8, max_iter: int = 1000):
    """Raw varimax rotation by cyclic pairwise (Jacobi) plane rotations.

    Each plane rotation is the exact maximizer of the criterion for its
    column pair, so the criterion never decreases. Sweeps stop once every
    rotation angle in a sweep is below ``tol``.

    Returns
    -------
    rotated : ndarray (d, k)
    rotation : ndarray (k, k)
        Orthogonal, with ``rotated = lam @ rotation``.
    """
    lam = np.array(lam, dtype=float)
    d, k = lam.shape
    R = np.eye(k)
    if k < 2:
        return lam, R
    for _ in range(max_iter):
        biggest = 0.0
        for a in range(k - 1):
            for b in range(a + 1, k):
                x, y = lam[:, a], lam[:, b]
                u = x * x - y * y
                v = 2.0 * x * y
                A, B = u.sum(), v.sum()
                num = 2.0 * (np.dot(u, v) - A * B / d)
                den = np.dot(u, u) - np.dot(v, v) - (A * A - B * B) / d
                phi = 0.25 * np.arctan2(num, den)
                if abs(phi) < 1e-15:
                    continue
                c, s = np.cos(phi), np.sin(phi)
                G = np.array([[c, -s], [s, c]])
                lam[:, [a, b]] = lam[:, [a, b]] @ G
                R[:, [a, b]] = R[:, [a, b]] @ G
                biggest = max(biggest, abs(phi))
        if biggest < tol:
            break
    return lam, R


def _column_correlation(a, b):
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    na = np.linalg.norm(a, axis=0)
    nb = np.linalg.norm(b, axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = (a.T @ b) / np.outer(na, nb)
    return np.nan_to_num(c)


def align_columns(reference, target):
    """Match ``target`` columns to ``reference`` columns.

    Pairs are chosen greedily by largest absolute correlation; ties resolve
    to the lowest (reference, target) indices.

    Returns
    -------
    perm : ndarray of int
        ``perm[i]`` is the target column matched to reference column ``i``.
    signs : ndarray of +-1
    aligned : ndarray
        ``target[:, perm] * signs``.
    """
    reference = np.asarray(reference, dtype=float)
    target = np.asarray(target, dtype=float)
    if reference.shape != target.shape:
        raise DimensionMismatch(f"shapes differ: {reference.shape} vs {target.shape}")
    k = reference.shape[1]
    corr = _column_correlation(reference, target)
    score = np.abs(corr)
    perm = np.full(k, -1)
    signs = np.ones(k)
    free_r, free_t = np.ones(k, bool), np.ones(k, bool)
    for _ in range(k):
        masked = np.where(free_r[:, None] & free_t[None, :], score, -1.0)
        i, j = np.unravel_index(np.argmax(masked), masked.shape)
        perm[i] = j
        signs[i] = -1.0 if corr[i, j] < 0 else 1.0
        free_r[i] = free_t[j] = False
    return perm, signs, target[:, perm] * signs


@dataclass
class AlignedSummary:
    mean: np.ndarray
    lower: np.ndarray
    upper: np.ndarray

    @property
    def display(self) -> np.ndarray:
        """Posterior means with entries whose interval covers zero set to 0."""
        covers = (self.lower <= 0) & (self.upper >= 0)
        return np.where(covers, 0.0, self.mean)

    def to_csv(self, path, row_names=None) -> None:
        d, k = self.mean.shape
        names = row_names if row_names is not None else [str(j) for j in range(d)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["row", "column", "mean", "lower", "upper", "display"])
            disp = self.display
            for j in range(d):
                for l in range(k):
                    w.writerow([names[j], l + 1, repr(float(self.mean[j, l])),
                                repr(float(self.lower[j, l])), repr(float(self.upper[j, l])),
                                repr(float(disp[j, l]))])


def summarize_aligned(draws, reference, rotate: bool = True, level: float = 0.95) -> AlignedSummary:
    """Entrywise posterior mean and equal-tailed interval of aligned loadings.

    ``draws`` is a PosteriorDraws or an array (S, d, k) of loadings. Each draw
    is varimax-rotated (unless ``rotate=False``) and aligned to ``reference``.
    """
    lams = draws.loadings if hasattr(draws, "loadings") else np.asarray(draws, dtype=float)
    if len(lams) == 0:
        raise EmptyInput("no draws to summarize")
    aligned = np.empty_like(lams)
    for s, lam in enumerate(lams):
        if rotate:
            lam = varimax(lam)[0]
        aligned[s] = align_columns(reference, lam)[2]
    tail = 0.5 * (1.0 - level)
    lower, upper = np.quantile(aligned, [tail, 1.0 - tail], axis=0)
    return AlignedSummary(aligned.mean(axis=0), lower, upper)
