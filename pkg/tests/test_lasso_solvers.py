import numpy as np
import pytest
from numpy.testing import assert_allclose

from blasso.base import InvalidArgumentError
from blasso.lasso_solvers import (
    LassoProblem, PFactorCache, build_p_subproblem, coordinate_descent_lasso, girls_lasso,
    gram_lasso_cd, soft_threshold, solve_lasso, solve_p_update,
)
from blasso.transport_admm import LassoObjectiveG


def _p_objective(g, p, BA, gamma, rho):
    """g(p) + gamma^T (p - BA) + rho/2 ||p - BA||^2."""
    return g.value(p) + gamma @ (p - BA) + 0.5 * rho * np.sum((p - BA) ** 2)


def _proximal_gradient(g, BA, gamma, rho, iters=6000):
    """FISTA on the same objective; the oracle for the Lasso reformulation."""
    gram = g.phi.T @ g.phi / g.sigma2
    L = np.linalg.eigvalsh(gram).max() + rho
    x = BA.copy()
    z = x.copy()
    t = 1.0
    for _ in range(iters):
        grad = gram @ z - g.phi.T @ g.y / g.sigma2 + gamma + rho * (z - BA)
        x_new = soft_threshold(z - grad / L, g.tau / L)
        t_new = 0.5 * (1 + np.sqrt(1 + 4 * t * t))
        z = x_new + (t - 1) / t_new * (x_new - x)
        x, t = x_new, t_new
    return x


def _random_instance(seed):
    gen = np.random.default_rng(seed)
    d = int(gen.integers(1, 6))
    n = int(gen.integers(d, 12))
    phi = 0.5 * gen.standard_normal((n, d))
    y = gen.standard_normal(n)
    g = LassoObjectiveG(phi, y, lam=float(gen.uniform(0.2, 3.0)))
    K = 4
    B = gen.standard_normal((d, K))
    A_i = gen.standard_normal(K)
    gamma = gen.standard_normal(d)
    rho = float(gen.choice([0.5, 1.0, 4.0]))
    return g, B, A_i, gamma, rho


# --- soft thresholding ---

def test_soft_threshold_values():
    assert_allclose(soft_threshold(np.array([3.0, -3.0, 0.5, -0.2]), 1.0), [2.0, -2.0, 0.0, 0.0])
    assert soft_threshold(-2.5, 0.5) == -2.0


def test_soft_threshold_rejects_negative():
    with pytest.raises(InvalidArgumentError):
        soft_threshold(np.ones(2), -1.0)


# --- standalone Lasso ---

def test_orthonormal_design_has_closed_form(rng):
    Q, _ = np.linalg.qr(rng.standard_normal((25, 4)))
    y = rng.standard_normal(25)
    lam = 0.6
    sol = coordinate_descent_lasso(LassoProblem(Q, y, lam))
    assert sol.converged
    assert_allclose(sol.coef, soft_threshold(Q.T @ y, lam / 2), atol=1e-9)


def test_null_weight_zeroes_solution(small_regression):
    phi, y = small_regression
    problem = LassoProblem(phi, y, 1.0)
    sol = coordinate_descent_lasso(LassoProblem(phi, y, problem.null_weight() * 1.0001))
    assert np.all(sol.coef == 0.0)


def test_zero_penalty_is_least_squares(small_regression):
    phi, y = small_regression
    sol = coordinate_descent_lasso(LassoProblem(phi, y, 0.0), tol=1e-12)
    assert_allclose(sol.coef, np.linalg.lstsq(phi, y, rcond=None)[0], atol=1e-7)


@pytest.mark.parametrize("lam", [0.5, 2.0, 8.0])
def test_girls_agrees_with_coordinate_descent(small_regression, lam):
    phi, y = small_regression
    problem = LassoProblem(phi, y, lam)
    cd = coordinate_descent_lasso(problem, tol=1e-12)
    irls = girls_lasso(problem)
    assert irls.objective <= cd.objective * (1 + 1e-5) + 1e-8
    assert_allclose(irls.coef, cd.coef, atol=1e-3)


def test_girls_warm_start_from_zero_is_not_stuck(small_regression):
    phi, y = small_regression
    problem = LassoProblem(phi, y, 0.5)
    cd = coordinate_descent_lasso(problem, tol=1e-12)
    irls = girls_lasso(problem, warm_start=np.zeros(4))
    assert_allclose(irls.coef, cd.coef, atol=1e-3)


def test_solve_lasso_dispatch(small_regression):
    phi, y = small_regression
    problem = LassoProblem(phi, y, 1.0)
    assert_allclose(solve_lasso(problem, "cd").coef, coordinate_descent_lasso(problem).coef)
    with pytest.raises(InvalidArgumentError):
        solve_lasso(problem, "lars")


def test_problem_rejects_negative_weight(small_regression):
    phi, y = small_regression
    with pytest.raises(InvalidArgumentError):
        LassoProblem(phi, y, -1.0)
    with pytest.raises(InvalidArgumentError):
        LassoProblem(phi, y[:-1], 1.0)


def test_batched_rows_are_independent(rng):
    M = rng.standard_normal((6, 3))
    gram = M.T @ M + np.eye(3)
    C = rng.standard_normal((5, 3))
    P, conv, _ = gram_lasso_cd(gram, C, 0.8)
    assert conv.all()
    for i in range(5):
        Pi, _, _ = gram_lasso_cd(gram, C[i:i + 1], 0.8)
        assert_allclose(P[i], Pi[0], atol=1e-12)


# --- p-update reduction ---

def test_reduced_objective_differs_by_constant():
    g, B, A_i, gamma, rho = _random_instance(5)
    sub = build_p_subproblem(g, B, A_i, gamma, rho)
    lasso = sub.as_lasso()
    BA = B @ A_i
    gen = np.random.default_rng(0)
    scale = 2 * g.sigma2
    gaps = [lasso.objective(p) - scale * _p_objective(g, p, BA, gamma, rho)
            for p in gen.standard_normal((4, g.dim))]
    assert_allclose(gaps, gaps[0], atol=1e-8)


@pytest.mark.parametrize("seed", range(20))
def test_p_update_matches_proximal_gradient(seed):
    g, B, A_i, gamma, rho = _random_instance(seed)
    BA = B @ A_i
    p = solve_p_update(build_p_subproblem(g, B, A_i, gamma, rho))
    oracle = _proximal_gradient(g, BA, gamma, rho)
    assert np.max(np.abs(p - oracle)) <= 1e-4
    f_p, f_o = _p_objective(g, p, BA, gamma, rho), _p_objective(g, oracle, BA, gamma, rho)
    assert f_p <= f_o + 1e-6 * max(1.0, abs(f_o))


@pytest.mark.slow
@pytest.mark.parametrize("seed", range(20, 200))
def test_p_update_matches_proximal_gradient_wide(seed):
    test_p_update_matches_proximal_gradient(seed)


def test_p_update_with_girls_solver():
    g, B, A_i, gamma, rho = _random_instance(3)
    sub = build_p_subproblem(g, B, A_i, gamma, rho)
    assert_allclose(solve_p_update(sub, solver="girls"), solve_p_update(sub, solver="cd"), atol=1e-4)


def test_cached_factor_is_reused():
    g, B, A_i, gamma, rho = _random_instance(8)
    cache = PFactorCache(g, rho)
    a = build_p_subproblem(g, B, A_i, gamma, rho, cache=cache)
    b = build_p_subproblem(g, B, A_i, gamma, rho)
    assert a.phi_hat is cache.factor
    assert_allclose(a.y_hat, b.y_hat)
