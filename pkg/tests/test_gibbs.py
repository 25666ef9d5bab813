import json

import numpy as np
import pytest
from scipy import integrate, stats

from tebfar import gibbs
from tebfar.errors import ConfigError, DimensionMismatch
from tebfar.gauss import make_rng
from tebfar.gibbs import SamplerConfig, run_chain
from tebfar.model import FactorModel, MgpHyperparams, MgpState, implied_covariance, loglik_split

HYPER = MgpHyperparams()


class StubRng:
    """Returns fixed 'random' values so a sampler's conditional parameters can be read off."""

    def __init__(self, normal=None):
        self.normal = normal or (lambda size: np.zeros(size))
        self.shapes = []

    def standard_normal(self, size):
        return self.normal(size)

    def standard_gamma(self, shape, size=None):
        shape = np.broadcast_to(np.asarray(shape, dtype=float), size or np.shape(shape))
        self.shapes.append(np.array(shape))
        # a "draw" equal to the shape makes rate = shape / result recoverable
        return np.array(shape)


def simulated(p=6, k=2, n=300, seed=0):
    rng = np.random.default_rng(seed)
    lam = rng.normal(0, 0.8, (p + 1, k))
    model = FactorModel(lam, rng.uniform(0.2, 0.5, p + 1))
    z = rng.multivariate_normal(np.zeros(p + 1), implied_covariance(model), size=n)
    return model, z


# configuration -----------------------------------------------------------

def test_default_k_max():
    assert gibbs.default_k_max(20) == 11
    assert gibbs.default_k_max(1) == 2
    assert gibbs.default_k_max(100) == 14


@pytest.mark.parametrize("kw", [
    dict(burn_in=10, iterations=10, sigma_y2=1.0),
    dict(thin=0, sigma_y2=1.0),
    dict(k_max=0, sigma_y2=1.0),
    dict(sigma_y2=0.0),
    dict(sigma_y2=float("inf")),
    dict(mode="jbfm", sigma_y2=0.5),
    dict(mode="other", sigma_y2=0.5),
])
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        SamplerConfig(**kw)


def test_config_round_trip():
    c = SamplerConfig(iterations=10, burn_in=4, thin=2, k_max=3, seed=9, sigma_y2=0.25)
    assert SamplerConfig.from_dict(json.loads(json.dumps(c.to_dict()))) == c
    assert c.n_retained == 3


# update_factors ----------------------------------------------------------

def test_factors_zero_loadings_follow_prior():
    data = np.zeros((100_000, 3))
    eta = gibbs.update_factors(np.zeros((3, 2)), np.ones(3), data, make_rng(0))
    assert np.abs(eta.mean(axis=0)).max() < 0.02
    assert np.abs(eta.var(axis=0) - 1).max() < 0.02


def test_factors_hand_example():
    # V = 1 / (1 + 1/1 + 1/1) = 1/3, mean = V * (1*2/1 + 1*0/1) = 2/3
    lam = np.array([[1.0], [1.0]])
    eta = gibbs.update_factors(lam, np.ones(2), np.array([[2.0, 0.0]]), StubRng())
    assert eta[0, 0] == pytest.approx(2 / 3, abs=1e-14)
    draws = gibbs.update_factors(lam, np.ones(2), np.tile([2.0, 0.0], (100_000, 1)), make_rng(1))
    assert draws.var() == pytest.approx(1 / 3, rel=0.02)


def test_factors_match_schur_oracle():
    rng = np.random.default_rng(3)
    P, k = 5, 3
    lam = rng.standard_normal((P, k))
    sig = rng.uniform(0.3, 1.5, P)
    z = rng.standard_normal(P)
    omega = lam @ lam.T + np.diag(sig)
    mean = lam.T @ np.linalg.solve(omega, z)
    cov = np.eye(k) - lam.T @ np.linalg.solve(omega, lam)
    got_mean = gibbs.update_factors(lam, sig, z[None, :], StubRng())[0]
    assert np.abs(got_mean - mean).max() < 1e-10
    # with unit-vector noise each draw minus the mean is a row of the
    # inverse Cholesky factor, so the rows' Gram matrix is V
    dev = gibbs.update_factors(lam, sig, np.tile(z, (k, 1)), StubRng(lambda size: np.eye(k))) - mean
    assert np.abs(dev.T @ dev - cov).max() < 1e-10


# update_loadings ---------------------------------------------------------

def test_loadings_without_data_follow_prior():
    xi = np.full((50_000, 2), 2.0)
    tau = np.array([1.0, 4.0])
    lam = gibbs.update_loadings(np.zeros((0, 2)), np.zeros((0, 50_000)), np.ones(50_000),
                                xi, tau, make_rng(2))
    assert np.allclose(lam.var(axis=0), 1 / (xi[0] * tau), rtol=0.03)


def test_loadings_infinite_shrinkage():
    rng = np.random.default_rng(4)
    eta, data = rng.standard_normal((20, 2)), rng.standard_normal((20, 3))
    lam = gibbs.update_loadings(eta, data, np.ones(3), np.full((3, 2), 1e12), np.ones(2),
                                make_rng(0))
    assert np.abs(lam).max() < 1e-4


def test_loadings_match_regression_oracle():
    rng = np.random.default_rng(5)
    n, P, k = 30, 4, 3
    eta, data = rng.standard_normal((n, k)), rng.standard_normal((n, P))
    sig = rng.uniform(0.3, 2.0, P)
    xi = rng.uniform(0.5, 3.0, (P, k))
    tau = np.cumprod(rng.uniform(1.0, 2.0, k))
    got = gibbs.update_loadings(eta, data, sig, xi, tau, StubRng())
    for j in range(P):
        prec = np.diag(xi[j] * tau) + eta.T @ eta / sig[j]
        mean = np.linalg.solve(prec, eta.T @ data[:, j] / sig[j])
        assert np.abs(got[j] - mean).max() < 1e-10


def test_loadings_conditional_variance():
    rng = np.random.default_rng(6)
    eta = rng.standard_normal((10, 2))
    P = 40_000
    data = np.tile(rng.standard_normal((10, 1)), (1, P))
    xi, tau, sig = np.full((P, 2), 1.5), np.array([1.0, 2.0]), np.full(P, 0.7)
    lam = gibbs.update_loadings(eta, data, sig, xi, tau, make_rng(7))
    prec = np.diag(xi[0] * tau) + eta.T @ eta / 0.7
    assert np.allclose(np.cov(lam.T), np.linalg.inv(prec), atol=0.02 * np.abs(np.linalg.inv(prec)).max())


# update_idiosyncratic ----------------------------------------------------

def test_idiosyncratic_zero_residuals_gives_prior_rate():
    stub = StubRng()
    eta = np.zeros((2, 1))
    new = gibbs.update_idiosyncratic(np.zeros((3, 1)), eta, np.zeros((2, 3)), np.ones(3),
                                     HYPER, stub, fix_response=False)
    # stub gamma returns the shape, so the draw is rate / shape
    assert np.allclose(stub.shapes[0], 2.0)
    assert np.allclose(new * stub.shapes[0], 0.3)


def test_idiosyncratic_mean():
    n, P = 20, 100_000
    rng = np.random.default_rng(8)
    data = np.tile(rng.standard_normal((n, 1)), (1, P))
    eta = np.zeros((n, 1))
    new = gibbs.update_idiosyncratic(np.zeros((P, 1)), eta, data, np.ones(P), HYPER, make_rng(9),
                                     fix_response=False)
    shape, rate = 1 + n / 2, 0.3 + 0.5 * np.sum(data[:, 0] ** 2)
    assert new.mean() == pytest.approx(rate / (shape - 1), rel=0.01)


def test_idiosyncratic_fast_path_matches_direct():
    model, z = simulated()
    rng = np.random.default_rng(1)
    eta = rng.standard_normal((len(z), 2))
    lam = np.asarray(model.loadings)
    a = gibbs.update_idiosyncratic(lam, eta, z, np.ones(7), HYPER, make_rng(3), False)
    b = gibbs.update_idiosyncratic(lam, eta, z, np.ones(7), HYPER, make_rng(3), False,
                                   eta.T @ eta, z.T @ eta, np.sum(z**2, axis=0))
    assert np.allclose(a, b, rtol=1e-10)


def test_idiosyncratic_fixed_response():
    model, z = simulated()
    sig = np.full(7, 0.5)
    sig[-1] = 0.123
    eta = np.random.default_rng(0).standard_normal((len(z), 2))
    rng = make_rng(0)
    for _ in range(1000):
        sig = gibbs.update_idiosyncratic(np.asarray(model.loadings), eta, z, sig, HYPER, rng, True)
    assert sig[-1] == 0.123


# update_local_precisions -------------------------------------------------

def _gamma_params(fn, *args):
    stub = StubRng()
    out = fn(*args, HYPER, stub)
    shape = stub.shapes[0]
    return shape, shape / out


def test_local_precision_at_zero_loading():
    shape, rate = _gamma_params(gibbs.update_local_precisions, np.zeros((1, 1)), np.ones(1))
    assert shape.item() == 2.0 and rate.item() == 1.5


def test_local_precision_monte_carlo_mean():
    # tau * lambda^2 = 3  ->  Gamma(2, 1.5 + 1.5) with mean 2/3
    lam = np.full((200_000, 1), 1.0)
    xi = gibbs.update_local_precisions(lam, np.array([3.0]), HYPER, make_rng(4))
    assert xi.mean() == pytest.approx(2 / 3, rel=0.01)


def test_local_precision_quadrature():
    lam, tau = 0.8, 2.5
    shape, rate = _gamma_params(gibbs.update_local_precisions, np.full((1, 1), lam), np.array([tau]))

    def unnorm(x):
        prior = stats.gamma.pdf(x, HYPER.xi_shape, scale=1 / HYPER.xi_rate)
        return prior * stats.norm.pdf(lam, scale=1 / np.sqrt(x * tau))

    z, _ = integrate.quad(unnorm, 0, np.inf, epsabs=1e-13)
    grid = np.linspace(0.01, 6.0, 200)
    assert np.abs(unnorm(grid) / z - stats.gamma.pdf(grid, shape.item(), scale=1 / rate.item())).max() < 1e-8


# update_column_multipliers -----------------------------------------------

def test_multiplier_zero_loadings():
    stub = StubRng()
    delta, tau = gibbs.update_column_multipliers(np.zeros((10, 1)), np.ones((10, 1)),
                                                 np.ones(1), HYPER, stub)
    assert stub.shapes[0].item() == pytest.approx(7.1)
    assert delta.item() == pytest.approx(7.1)  # stub gamma = shape, rate 1


def test_multiplier_quadrature_single_column():
    rng = np.random.default_rng(10)
    lam = rng.standard_normal((6, 1))
    xi = rng.uniform(0.5, 2.0, (6, 1))
    stub = StubRng()
    delta, _ = gibbs.update_column_multipliers(lam, xi, np.array([1.7]), HYPER, stub)
    shape = stub.shapes[0].item()
    rate = shape / delta.item()

    def unnorm(d):
        prior = stats.gamma.pdf(d, HYPER.a1)
        like = np.prod(stats.norm.pdf(lam[:, 0], scale=1 / np.sqrt(xi[:, 0] * d)))
        return prior * like

    z, _ = integrate.quad(unnorm, 0, np.inf, epsabs=1e-14)
    grid = np.linspace(0.05, 10.0, 100)
    dens = np.array([unnorm(d) for d in grid]) / z
    assert np.abs(dens - stats.gamma.pdf(grid, shape, scale=1 / rate)).max() < 1e-8


def test_multiplier_sequential_rates():
    # brute-force rates of each sequential conditional, using updated values
    rng = np.random.default_rng(11)
    P, k = 5, 4
    lam = rng.standard_normal((P, k))
    xi = rng.uniform(0.5, 2.0, (P, k))
    delta0 = rng.uniform(0.5, 2.0, k)
    stub = StubRng()
    delta, tau = gibbs.update_column_multipliers(lam, xi, delta0, HYPER, stub)
    shapes = stub.shapes[0]
    cur = delta0.copy()
    for h in range(k):
        rate = 1.0
        for l in range(h, k):
            t = np.prod([cur[m] for m in range(l + 1) if m != h])
            rate += 0.5 * t * np.sum(xi[:, l] * lam[:, l] ** 2)
        expected_shape = HYPER.delta_shapes(k)[h] + 0.5 * P * (k - h)
        assert shapes[h] == pytest.approx(expected_shape)
        assert delta[h] == pytest.approx(expected_shape / rate, rel=1e-12)
        cur[h] = delta[h]
    assert np.allclose(tau, np.cumprod(delta), rtol=1e-12)


# run_chain ---------------------------------------------------------------

def test_fixed_variance_contract():
    _, z = simulated()
    draws = run_chain(z[:, :-1], z[:, -1], SamplerConfig(iterations=300, burn_in=100, thin=2,
                                                         sigma_y2=0.5, seed=1))
    assert len(draws) == 100
    assert np.all(draws.sigma_diag[:, -1] == 0.5)


def test_chain_is_deterministic():
    _, z = simulated()
    cfg = SamplerConfig(iterations=60, burn_in=20, thin=2, sigma_y2=0.5, seed=3)
    a = run_chain(z[:, :-1], z[:, -1], cfg)
    b = run_chain(z[:, :-1], z[:, -1], cfg)
    assert np.array_equal(a.loadings, b.loadings) and np.array_equal(a.beta, b.beta)


def test_jbfm_samples_response_variance():
    _, z = simulated()
    draws = run_chain(z[:, :-1], z[:, -1], SamplerConfig(iterations=200, burn_in=100, mode="jbfm"))
    assert draws.sigma_diag[:, -1].std() > 0


def test_draws_carry_induced_regressions():
    _, z = simulated()
    draws = run_chain(z[:, :-1], z[:, -1], SamplerConfig(iterations=40, burn_in=20, sigma_y2=0.3))
    for i in (0, len(draws) - 1):
        from tebfar.model import induced_regression
        reg = induced_regression(draws.model(i))
        assert np.allclose(reg.beta, draws.beta[i], atol=1e-10)


def test_dimension_checks():
    with pytest.raises(DimensionMismatch):
        run_chain(np.zeros((5, 2)), np.zeros(4), SamplerConfig(iterations=10, burn_in=1, sigma_y2=1))


def test_draws_round_trip(tmp_path):
    _, z = simulated()
    draws = run_chain(z[:, :-1], z[:, -1], SamplerConfig(iterations=30, burn_in=10, thin=2,
                                                         sigma_y2=0.4, k_max=3))
    gibbs.save_draws(tmp_path / "m", draws, {"note": "x"})
    back = gibbs.load_draws(tmp_path / "m")
    manifest = json.loads((tmp_path / "m" / "manifest.json").read_text())
    assert manifest["retained"] == 10 and manifest["note"] == "x"
    assert back.config == draws.config
    for a, b in [(back.loadings, draws.loadings), (back.sigma_diag, draws.sigma_diag),
                 (back.beta, draws.beta), (back.sigma2, draws.sigma2)]:
        assert np.array_equal(a, b)


def test_manifest_matches_shipped_schema(tmp_path):
    import pathlib

    import jsonschema

    schema_path = pathlib.Path(__file__).resolve().parents[1] / "schemas" / "draws_manifest.schema.json"
    schema = json.loads(schema_path.read_text())
    _, z = simulated()
    for cfg in (SamplerConfig(iterations=20, burn_in=10, sigma_y2=0.4),
                SamplerConfig(iterations=20, burn_in=10, mode="jbfm")):
        gibbs.save_draws(tmp_path / cfg.mode, run_chain(z[:, :-1], z[:, -1], cfg))
        jsonschema.validate(json.loads((tmp_path / cfg.mode / "manifest.json").read_text()), schema)


def _final_loglik(draws, z):
    return loglik_split(draws.model(len(draws) - 1), z)[0]


def test_stationarity_from_truth():
    truth, z = simulated(p=5, k=2, n=200, seed=12)
    X, y = z[:, :-1], z[:, -1]
    cfg = dict(iterations=500, burn_in=499, thin=1, mode="jbfm", k_max=4)
    band = [_final_loglik(run_chain(X, y, SamplerConfig(seed=s, **cfg)), z) for s in range(20)]
    lam = np.zeros((6, 4))
    lam[:, :2] = truth.loadings
    init = (FactorModel(lam, truth.sigma_diag), MgpState(np.ones((6, 4)), np.ones(4)))
    final = _final_loglik(run_chain(X, y, SamplerConfig(seed=99, **cfg), init=init), z)
    assert min(band) <= final <= max(band)


def test_column_swap_permutes_posterior():
    _, z = simulated(p=5, k=2, n=300, seed=13)
    perm = [1, 0, 2, 3, 4, 5]
    cfg = dict(iterations=600, burn_in=200, thin=2, sigma_y2=0.3, k_max=4)

    def runs(data):
        covs = [run_chain(data[:, :-1], data[:, -1], SamplerConfig(seed=s, **cfg)).mean_covariance()
                for s in range(6)]
        covs = np.array(covs)
        return covs.mean(axis=0), covs.std(axis=0, ddof=1) / np.sqrt(len(covs))

    a, se_a = runs(z)
    b, se_b = runs(z[:, perm])
    b = b[np.ix_(perm, perm)]
    se_b = se_b[np.ix_(perm, perm)]
    assert np.linalg.norm(a - b) <= 2 * np.sqrt(np.sum(se_a**2) + np.sum(se_b**2))


@pytest.mark.slow
def test_posterior_recovery():
    rng = np.random.default_rng(21)
    lam = rng.normal(0, 1, (10, 3))
    truth = implied_covariance(FactorModel(lam, np.full(10, 0.3)))
    z = rng.multivariate_normal(np.zeros(10), truth, size=2000)
    draws = run_chain(z[:, :-1], z[:, -1], SamplerConfig(iterations=3000, burn_in=1500, k_max=6,
                                                         mode="jbfm", seed=1))
    err = np.linalg.norm(draws.mean_covariance() - truth) / np.linalg.norm(truth)
    assert err <= 0.15
