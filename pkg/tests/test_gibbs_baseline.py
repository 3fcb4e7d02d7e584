import numpy as np
import pytest
from scipy import integrate, stats

from blasso.base import InvalidArgumentError
from blasso.gibbs_baseline import (
    run_gibbs, sample_invt2_conditional, sample_sigma2_conditional, sample_x_conditional,
)
from blasso.posterior_analysis import ks_distance, quadrature_posterior_cdf


def test_invt2_conditional_is_inverse_gaussian():
    rng = np.random.default_rng(0)
    x, sigma2, lam = np.full(100_000, 0.4), 0.8, 1.3
    draws = sample_invt2_conditional(x, sigma2, lam, rng)
    mean = np.sqrt(lam ** 2 * sigma2) / 0.4
    shape = lam ** 2
    reference = stats.invgauss(mu=mean / shape, scale=shape)
    assert stats.kstest(draws, reference.cdf).statistic < 0.01
    se = np.sqrt(reference.var() / draws.size)
    assert abs(draws.mean() - mean) < 3 * se


def test_invt2_conditional_at_zero_draws_from_prior():
    rng = np.random.default_rng(1)
    draws = sample_invt2_conditional(np.zeros(50_000), 1.0, 2.0, rng)
    assert np.all(np.isfinite(draws)) and np.all(draws > 0)
    # t^2 ~ Exponential(rate lambda^2 / 2) has mean 2 / lambda^2
    t2 = 1.0 / draws
    assert abs(t2.mean() - 0.5) < 3 * 0.5 / np.sqrt(t2.size)


def test_sigma2_conditional_moments(small_regression):
    phi, y = small_regression
    rng = np.random.default_rng(2)
    x = np.array([1.4, 0.1, -0.6, 0.0])
    inv_t2 = np.array([0.5, 2.0, 1.0, 4.0])
    n, d = phi.shape
    a = 0.5 * (n - 1) + 0.5 * d
    resid = y - phi @ x
    b = 0.5 * resid @ resid + 0.5 * np.sum(x ** 2 * inv_t2)
    draws = np.array([sample_sigma2_conditional(y, phi, x, inv_t2, rng) for _ in range(50_000)])
    mean = b / (a - 1)
    var = b ** 2 / ((a - 1) ** 2 * (a - 2))
    assert abs(draws.mean() - mean) < 3 * np.sqrt(var / draws.size)


def test_x_conditional_moments(small_regression):
    phi, y = small_regression
    rng = np.random.default_rng(3)
    inv_t2 = np.array([0.5, 2.0, 1.0, 4.0])
    sigma2 = 0.3
    A = phi.T @ phi + np.diag(inv_t2)
    mean = np.linalg.solve(A, phi.T @ y)
    cov = sigma2 * np.linalg.inv(A)
    draws = np.array([sample_x_conditional(y, phi, inv_t2, sigma2, rng) for _ in range(20_000)])
    se = np.sqrt(np.diag(cov) / draws.shape[0])
    assert np.all(np.abs(draws.mean(axis=0) - mean) < 3.5 * se)
    np.testing.assert_allclose(np.cov(draws.T), cov, rtol=0.1, atol=0.05 * np.max(np.diag(cov)))


def test_run_gibbs_shapes_and_seed(small_regression):
    phi, y = small_regression
    a = run_gibbs(y, phi, 1.0, iters=200, burn_in=50, seed=4, thin=2)
    b = run_gibbs(y, phi, 1.0, iters=200, burn_in=50, seed=4, thin=2)
    assert a.draws.shape == (200, 4) and a.sigma2_draws.shape == (200,)
    assert a.t2_draws.shape == (200, 4) and np.all(a.t2_draws > 0)
    np.testing.assert_array_equal(a.draws, b.draws)
    assert np.all(a.sigma2_draws > 0)


def test_fixed_sigma2_stays_fixed(small_regression):
    phi, y = small_regression
    chain = run_gibbs(y, phi, 0.7, iters=100, burn_in=10, seed=0, fix_sigma2=0.5)
    assert np.all(chain.sigma2_draws == 0.5)
    assert chain.tau_equivalent == pytest.approx(0.7 / np.sqrt(0.5))


@pytest.mark.parametrize("kwargs", [{"lambda_pc": 0.0}, {"lambda_pc": 1.0, "iters": 0}, {"lambda_pc": 1.0, "thin": 0}])
def test_run_gibbs_validation(small_regression, kwargs):
    phi, y = small_regression
    with pytest.raises(InvalidArgumentError):
        run_gibbs(y, phi, **kwargs)


def test_chain_halves_agree(small_regression):
    phi, y = small_regression
    chain = run_gibbs(y, phi, 1.0, iters=4000, burn_in=500, seed=8)
    first, second = chain.draws[:2000], chain.draws[2000:]
    # loose bound: draws are autocorrelated
    se = np.sqrt(first.var(axis=0) / 2000 + second.var(axis=0) / 2000)
    assert np.all(np.abs(first.mean(axis=0) - second.mean(axis=0)) < 8 * se)


@pytest.mark.slow
def test_fixed_sigma2_chain_matches_quadrature(one_d_problem):
    g = one_d_problem
    lambda_pc = g.tau * np.sqrt(g.sigma2)
    chain = run_gibbs(g.y, g.phi, lambda_pc, iters=20_000, burn_in=1000, seed=0, fix_sigma2=g.sigma2)
    cdf = quadrature_posterior_cdf(g, np.linspace(-15, 15, 100_001))
    assert ks_distance(chain.draws[:, 0], cdf) < 0.08


@pytest.mark.slow
def test_random_sigma2_chain_matches_two_dimensional_quadrature():
    gen = np.random.default_rng(11)
    phi = gen.standard_normal((6, 1))
    y = 0.5 * phi[:, 0] + 0.5 * gen.standard_normal(6)
    lam = 1.0
    chain = run_gibbs(y, phi, lam, iters=20_000, burn_in=1000, seed=1)

    # marginal of x under pi(x, s2 | y) with pi(x | s2) Laplace(rate lam / sqrt(s2)) and pi(s2) ~ 1/s2
    xs = np.linspace(-6, 6, 2001)
    s2 = np.geomspace(1e-3, 1e2, 2000)
    X, S = np.meshgrid(xs, s2, indexing="ij")
    resid = y @ y - 2 * X * (phi[:, 0] @ y) + X ** 2 * (phi[:, 0] @ phi[:, 0])
    # the centred-response likelihood carries (s2)^(-(n-1)/2)
    log_joint = (-0.5 * (y.size - 1) * np.log(S) - resid / (2 * S)
                 + np.log(lam / (2 * np.sqrt(S))) - lam * np.abs(X) / np.sqrt(S) - np.log(S))
    joint = np.exp(log_joint - log_joint.max())
    marginal = integrate.trapezoid(joint * S, np.log(s2), axis=1)
    cdf_vals = np.concatenate([[0.0], np.cumsum(0.5 * (marginal[1:] + marginal[:-1]) * np.diff(xs))])
    cdf_vals /= cdf_vals[-1]
    assert ks_distance(chain.draws[:, 0], lambda v: np.interp(v, xs, cdf_vals)) < 0.08
