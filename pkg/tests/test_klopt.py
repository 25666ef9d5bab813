import csv

import numpy as np
import pytest

from tebfar import gauss, klopt
from tebfar.errors import LengthMismatch, NotPositiveDefinite
from tebfar.model import FactorModel, implied_covariance
from tebfar.simulate import MOTIVATING_LOADINGS, motivating_model

S0 = implied_covariance(motivating_model())
LAM1, LAM2 = MOTIVATING_LOADINGS[:, 0], MOTIVATING_LOADINGS[:, 1]

EXPECTED_LAMBDA = np.array([0.0004, -4.0016, -0.0000, -7.9810, -4.0016, -5.9853, 1.0002,
                             -0.9973, 4.0016, 0.0004])
EXPECTED_SIGMA = np.array([1.2000, 0.1872, 0.2000, 1.5032, 0.1872, 1.3763, 0.1996, 1.2054,
                            0.1872, 1.2000])


def random_pd(rng, d):
    a = rng.standard_normal((d, d))
    return a @ a.T + 0.5 * np.eye(d)


def test_loading_distance_examples():
    a = np.array([0.3, -1.2, 2.0])
    assert klopt.loading_distance(a, a) == 0.0
    assert klopt.loading_distance(a, -a) == 0.0
    assert klopt.loading_distance([1.0, 0.0], [0.0, 1.0]) == 2.0
    with pytest.raises(LengthMismatch):
        klopt.loading_distance([1.0], [1.0, 2.0])


def test_default_grid():
    g = klopt.default_grid()
    assert len(g) == 240 and g[0] == 0.005 and g[-1] == 1.2
    assert np.all(np.diff(g) > 0)


def test_realizable_target():
    rng = np.random.default_rng(0)
    truth = FactorModel(rng.standard_normal((7, 2)), rng.uniform(0.3, 1.0, 7))
    s0 = implied_covariance(truth)
    model, kl = klopt.population_em_fit(s0, 2, fixed_y_var=truth.sigma_diag[-1], max_iter=50_000,
                                        tol=1e-14)
    assert kl < 1e-9
    assert np.abs(implied_covariance(model) - s0).max() < 1e-6


def test_known_one_factor_fit():
    model, _ = klopt.population_em_fit(S0, 1)
    lam = model.loadings[:, 0]
    lam = lam * np.sign(lam @ EXPECTED_LAMBDA)
    assert np.abs(lam - EXPECTED_LAMBDA).max() < 5e-3
    assert np.abs(model.sigma_diag - EXPECTED_SIGMA).max() < 5e-3


def test_small_fixed_variance_switches_factor():
    model, _ = klopt.population_em_fit(S0, 1, fixed_y_var=0.02)
    lam = model.loadings[:, 0]
    assert klopt.loading_distance(lam, LAM2) < klopt.loading_distance(lam, LAM1)


def test_fixed_entry_is_exact():
    for v in (0.013, 0.4, 1.1):
        model, _ = klopt.population_em_fit(S0, 1, fixed_y_var=v, n_restarts=3)
        assert model.sigma_diag[-1] == v
        assert model.y_variance_fixed


def test_constraint_cannot_help():
    _, free = klopt.population_em_fit(S0, 1)
    for v in (0.01, 0.06, 0.3, 1.2):
        _, kl = klopt.population_em_fit(S0, 1, fixed_y_var=v, n_restarts=4)
        assert kl >= free - 1e-9


@pytest.mark.parametrize("k,fixed", [(1, None), (1, 0.05), (2, None), (3, 0.3)])
def test_em_is_monotone(k, fixed):
    rng = np.random.default_rng(k)
    s0 = random_pd(rng, 6)
    lam = rng.standard_normal((3, 6, k))
    psi = np.tile(0.5 * np.diag(s0), (3, 1))
    *_, traces = klopt.em_fit_batch(s0, lam, psi, fixed, max_iter=500, history=True)
    for t in traces:
        assert np.all(np.diff(t) <= 1e-12)


def test_batch_kl_matches_dense_formula():
    rng = np.random.default_rng(7)
    s0 = random_pd(rng, 5)
    for k in (1, 2):
        lam = rng.standard_normal((1, 5, k))
        psi = rng.uniform(0.2, 1.0, (1, 5))
        _, _, kl, _ = klopt.em_fit_batch(s0, lam, psi, max_iter=0)
        dense = gauss.kl_gaussian(s0, lam[0] @ lam[0].T + np.diag(psi[0]))
        assert kl[0] == pytest.approx(dense, abs=1e-10)


def test_fit_errors():
    with pytest.raises(NotPositiveDefinite):
        klopt.population_em_fit([[1.0, 2.0], [2.0, 1.0]], 1)
    with pytest.raises(ValueError):
        klopt.population_em_fit(np.eye(3), 3)
    with pytest.raises(ValueError):
        klopt.population_em_fit(np.eye(3), 1, fixed_y_var=0.0)


def test_expected_split_at_truth():
    model = motivating_model()
    joint, _, _ = klopt.expected_loglik_split(model, S0)
    d = S0.shape[0]
    expected = -0.5 * (d * np.log(2 * np.pi) + np.linalg.slogdet(S0)[1] + d)
    assert joint == pytest.approx(expected, abs=1e-10)


def test_expected_split_identity_100_pairs():
    rng = np.random.default_rng(1)
    for _ in range(100):
        d = int(rng.integers(2, 8))
        model = FactorModel(rng.standard_normal((d, 2)), rng.uniform(0.2, 1.5, d))
        joint, x, yx = klopt.expected_loglik_split(model, random_pd(rng, d))
        assert abs(joint - (x + yx)) < 1e-10


def test_expected_split_monte_carlo():
    rng = np.random.default_rng(2)
    model = FactorModel(rng.standard_normal((4, 1)), rng.uniform(0.3, 1.0, 4))
    s0 = random_pd(rng, 4)
    L = np.linalg.cholesky(s0)
    z = rng.standard_normal((1_000_000, 4)) @ L.T
    omega = implied_covariance(model)
    per_row = gauss.gaussian_logpdf(z, omega)
    se = per_row.std() / np.sqrt(len(per_row))
    joint, _, _ = klopt.expected_loglik_split(model, s0)
    assert abs(per_row.mean() - joint) < 3 * se
    mc = klopt.monte_carlo_loglik_split(model, s0, 200_000, gauss.make_rng(3))
    assert abs(mc[0] - joint) < 0.05 * abs(joint)


def test_single_point_scan_matches_direct_fit():
    direct, kl = klopt.population_em_fit(S0, 1, fixed_y_var=0.02)
    scan = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS, grid=[0.02])
    assert len(scan) == 1
    assert scan.kl[0] == pytest.approx(kl, abs=1e-8)
    assert klopt.loading_distance(scan.models[0].loadings, direct.loadings) < 1e-6


def test_grid_refinement_consistency():
    coarse = [0.02, 0.1, 0.5]
    fine = [0.02, 0.04, 0.1, 0.3, 0.5]
    a = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS, grid=coarse, n_restarts=4, warm_start=False)
    b = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS, grid=fine, n_restarts=4, warm_start=False)
    shared = [fine.index(v) for v in coarse]
    assert np.array_equal(a.kl, b.kl[shared])
    assert np.array_equal(a.distances, b.distances[shared])
    c = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS, grid=coarse, n_restarts=4)
    d = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS, grid=fine, n_restarts=4)
    assert np.allclose(c.kl, d.kl[shared], atol=1e-8)


def test_scan_csv(tmp_path):
    scan = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS, grid=[0.05, 0.5], n_restarts=2)
    scan.to_csv(tmp_path / "s.csv")
    with open(tmp_path / "s.csv") as fh:
        rows = list(csv.reader(fh))
    assert rows[0] == ["sigma_y2", "kl", "dist_col_1", "dist_col_2", "ell_joint", "ell_x",
                       "ell_y_given_x"]
    assert len(rows) == 3
    assert float(rows[2][0]) == 0.5
    assert np.all(scan.kl >= 0)
    assert np.allclose(scan.ell_joint, scan.ell_x + scan.ell_y_given_x, atol=1e-10)


def test_crossings():
    scan = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS, grid=[0.02, 0.04, 0.08, 0.2], n_restarts=4)
    assert list(scan.crossings()) == [1]


@pytest.mark.slow
def test_likelihood_jump_across_crossing():
    scan = klopt.scan_sigma_grid(S0, MOTIVATING_LOADINGS)
    i = scan.crossings()[0]
    jump = scan.ell_y_given_x[i] - scan.ell_y_given_x[i + 1]
    assert scan.ell_x[i] < scan.ell_x[i + 1]
    assert jump > 10.0, f"y|x expected log-likelihood rises by only {jump:.3f} per observation"
