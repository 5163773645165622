import math

import numpy as np
import pytest
from scipy.special import gammaln

from cmpmu import distribution as dist
from cmpmu.data import Dataset, load_takeover_bids
from cmpmu.errors import DegenerateData, MeanOverflow, RankDeficientDesign, UnknownVariable
from cmpmu.fit import (
    CountRegression,
    ModelSpec,
    fisher_blocks,
    fit_glm,
    fit_iid,
    fit_model,
    fit_regression,
    loglik,
    score_vector,
)

from oracles import poisson_irls

TAKEOVER_TERMS = ("leglrest + rearest + finrest + whtknght + bidprem + insthold"
                  " + size + size^2 + regulatn")


def _simulate(n, beta, nu, seed, z_gamma=None):
    rng = np.random.default_rng(seed)
    X = np.column_stack([np.ones(n), rng.normal(size=(n, len(beta) - 1))])
    mu = np.exp(X @ beta)
    nus = np.full(n, nu) if z_gamma is None else np.exp(z_gamma(X))
    theta, _ = dist.solve_rate_batch(mu, nus)
    return X, dist.sample_rows(theta, nus, rng)


# -- iid ---------------------------------------------------------------------

def test_iid_degenerate():
    with pytest.raises(DegenerateData) as info:
        fit_iid([3, 3, 3, 3])
    assert info.value.mu_hat == 3.0
    assert info.value.nu_hat == math.inf


def test_iid_mean_is_sample_mean():
    y = np.array([0, 2, 5, 1, 1, 3, 7, 2])
    assert fit_iid(y).beta[0] == y.mean()


def test_iid_dispersion_within_wald_band():
    p = dist.CmpParams.from_mean(3.0, 2.1)
    y = dist.sample(p, 10_000, seed=21)
    m = fit_iid(y)
    assert abs(m.nu - 2.1) < 2.576 * m.se_disp[0]
    # the MLE of nu matches the sample mean of log y! to E[log Y!]
    mf = dist.moment_functionals(dist.CmpParams.from_mean(y.mean(), m.nu))
    assert mf.b_val == pytest.approx(gammaln(y + 1.0).mean(), rel=1e-10)


# -- regression --------------------------------------------------------------

@pytest.mark.parametrize("seed", range(3))
def test_poisson_reduction(seed):
    X, y = _simulate(200, np.array([0.5, 0.3, -0.2, 0.1]), 1.0, seed)
    m = fit_glm(ModelSpec(fixed_nu=1.0), X, y)
    assert m.converged
    assert np.max(np.abs(m.beta - poisson_irls(X, y))) < 1e-6
    assert m.dispersion == "fixed" and m.n_params == 4


def test_takeover_table():
    m = fit_model(ModelSpec("numbids", TAKEOVER_TERMS), load_takeover_bids())
    assert m.converged
    assert m.nu == pytest.approx(1.754, abs=0.01)
    assert m.loglik == pytest.approx(-180.1, abs=0.2)
    got = dict(zip(m.labels, m.beta))
    assert got["whtknght"] == pytest.approx(0.481, abs=0.005)
    assert got["size^2"] == pytest.approx(-0.008, abs=0.005)
    assert m.score_norm < 1e-8


def test_loglik_trace_nondecreasing():
    X, y = _simulate(300, np.array([1.0, 0.4, -0.3]), 0.5, 5)
    m = fit_glm(ModelSpec(), X, y)
    assert m.converged
    assert np.all(np.diff(m.loglik_trace) >= -1e-9)


def test_score_zero_at_mle():
    X, y = _simulate(300, np.array([1.0, 0.4, -0.3]), 1.8, 6)
    m = fit_glm(ModelSpec(), X, y)
    prob = CountRegression(X, y)
    assert np.max(np.abs(score_vector(prob, m.beta, nu=m.nu))) < 1e-6


def test_single_observation_at_mean_has_zero_beta_score():
    X = np.array([[1.0, 0.5]])
    beta = np.array([math.log(4.0) - 0.5 * 0.2, 0.2])
    s = score_vector(CountRegression(X, [4]), beta, nu=1.7)
    assert np.allclose(s[:2], 0.0, atol=1e-12)


def _fd_gradient(f, x, h=1e-6):
    g = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        g[j] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("seed", range(4))
def test_score_matches_finite_differences(seed):
    rng = np.random.default_rng(100 + seed)
    X, y = _simulate(60, np.array([0.8, 0.3, -0.4]), 1.3, seed)
    prob = CountRegression(X, y)
    beta = np.array([0.8, 0.3, -0.4]) + rng.normal(scale=0.1, size=3)
    nu = float(rng.uniform(0.4, 2.5))

    def f(p):
        return loglik(prob, p[:3], nu=p[3])

    x = np.concatenate([beta, [nu]])
    analytic = score_vector(prob, beta, nu=nu)
    numeric = _fd_gradient(f, x)
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1.0)) < 1e-5


def test_dispersion_regression_score_matches_finite_differences():
    X, y = _simulate(80, np.array([0.8, 0.3]), 1.0, 3)
    Z = X.copy()
    prob = CountRegression(X, y, Z=Z)
    beta, gamma = np.array([0.7, 0.25]), np.array([0.2, -0.3])

    def f(p):
        return loglik(prob, p[:2], gamma=p[2:])

    analytic = score_vector(prob, beta, gamma=gamma)
    numeric = _fd_gradient(f, np.concatenate([beta, gamma]))
    assert np.max(np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1.0)) < 1e-5


def test_fisher_blocks_poisson():
    X, y = _simulate(150, np.array([0.5, 0.2]), 1.0, 8)
    prob = CountRegression(X, y)
    beta = np.array([0.5, 0.2])
    w1, _ = fisher_blocks(prob, beta, nu=1.0)
    mu = np.exp(X @ beta)
    assert np.allclose(w1, (X.T * mu) @ X / len(y), rtol=1e-9)


def test_intercept_only_covariance():
    y = dist.sample(dist.CmpParams.from_mean(4.0, 0.6), 400, seed=2)
    m = fit_glm(ModelSpec(), np.ones((400, 1)), y)
    mu_hat = math.exp(m.beta[0])
    assert mu_hat == pytest.approx(y.mean(), rel=1e-8)
    v = dist.moment_functionals(dist.CmpParams.from_mean(mu_hat, m.nu)).variance
    assert m.cov_beta[0, 0] == pytest.approx(v / (400 * mu_hat**2), rel=1e-6)


def test_orthogonality_in_practice():
    X, y = _simulate(2000, np.array([1.0, 0.3, -0.2]), 1.5, 9)
    m = fit_glm(ModelSpec(), X, y)
    _, mom = dist.solve_rate_batch(m.per_obs_mu, m.per_obs_nu)
    resid = (y - m.per_obs_mu) / mom.var
    s_beta = X * (resid * m.per_obs_mu)[:, None]
    s_nu = mom.a * resid - (gammaln(y + 1.0) - mom.b)
    cross = s_beta.T @ s_nu / len(y)
    w1, _ = fisher_blocks(CountRegression(X, y), m.beta, nu=m.nu)
    assert np.linalg.norm(cross) < 1e-2 * np.linalg.norm(w1)


def test_dispersion_regression_recovers_gamma():
    def gam(X):
        return 0.3 + 0.4 * X[:, 1]

    X, y = _simulate(3000, np.array([1.2, 0.3]), None, 10, z_gamma=gam)
    m = fit_glm(ModelSpec(dispersion_terms="x"), X, y, dispersion_design=X)
    assert m.converged and m.dispersion == "regression"
    assert np.all(np.abs(m.gamma - [0.3, 0.4]) < 4 * m.se_disp)


def test_exposure_offset():
    rng = np.random.default_rng(4)
    n = 400
    e = rng.uniform(0.5, 3.0, n)
    X = np.column_stack([np.ones(n), rng.normal(size=n)])
    mu = e * np.exp(X @ [0.4, 0.3])
    theta, _ = dist.solve_rate_batch(mu, 1.0)
    y = dist.sample_rows(theta, 1.0, rng)
    m = fit_glm(ModelSpec(fixed_nu=1.0), X, y, exposure=e)
    assert np.allclose(m.beta, poisson_irls(X, y, offset=np.log(e)), atol=1e-8)


def test_identity_link():
    rng = np.random.default_rng(12)
    n = 500
    x = rng.uniform(0, 1, n)
    X = np.column_stack([np.ones(n), x])
    theta, _ = dist.solve_rate_batch(X @ [2.0, 3.0], 1.4)
    y = dist.sample_rows(theta, 1.4, rng)
    m = fit_glm(ModelSpec(link="identity"), X, y)
    assert m.converged
    assert np.all(np.abs(m.beta - [2.0, 3.0]) < 4 * m.se_beta)


def test_rank_deficient_design():
    X = np.column_stack([np.ones(20), np.arange(20), 2 * np.arange(20)])
    with pytest.raises(RankDeficientDesign):
        fit_glm(ModelSpec(), X, np.arange(20) % 4)


def test_mean_overflow():
    X = np.column_stack([np.ones(10), np.arange(10.0)])
    prob = CountRegression(X, np.arange(10))
    with pytest.raises(MeanOverflow):
        fit_regression(prob, beta0=np.array([0.0, 5.0]))


def test_fit_model_drops_missing_rows():
    data = Dataset({"y": np.array([1.0, 2.0, np.nan, 0.0, 3.0, 1.0, 2.0, 4.0]),
                    "x": np.array([0.1, 0.5, 0.2, np.nan, 0.9, 0.3, 0.4, 0.8])})
    m = fit_model(ModelSpec("y", "x"), data)
    assert m.n_obs == 6


def test_unknown_variable():
    with pytest.raises(UnknownVariable, match="nope"):
        fit_model(ModelSpec("numbids", "nope"), load_takeover_bids())

