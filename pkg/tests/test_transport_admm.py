from dataclasses import replace

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from blasso import transport_admm
from blasso.base import InvalidArgumentError, NumericalError
from blasso.lasso_solvers import PFactorCache
from blasso.posterior_analysis import ks_distance, push_samples, quadrature_posterior_cdf
from blasso.prior_pce import LaplacianPrior, build_multi_index_set, sample_laplacian
from blasso.transport_admm import (
    AdmmBlock, AdmmConfig, AdmmState, LassoObjectiveG, TransportMap, _chunks, admm_iteration, apply_map,
    check_monotonicity, continuity_basis, continuity_gaps, empirical_objective, initial_state,
    jacobian_equation_residual, logdet_prox, precompute_M, run_admm, update_B, update_duals, update_F, update_Z,
)


def _fit(g, order=2, n_train=40, seed=0, **cfg):
    basis = build_multi_index_set(g.dim, order, rate=g.tau)
    train = sample_laplacian(LaplacianPrior(g.dim, g.tau), n_train, seed)
    return run_admm(g, train, basis, AdmmConfig(**cfg)), train


# --- primitives ---

def test_objective_scales_with_sigma2():
    g = LassoObjectiveG(np.eye(2), np.array([1.0, -1.0]), lam=2.0, sigma2=2.0)
    assert g.tau == pytest.approx(0.5)
    x = np.array([0.5, 0.0])
    assert g.value(x) == pytest.approx((0.25 + 1.0) / 4.0 + 0.25)


def test_logdet_prox_satisfies_optimality(rng):
    rho = 2.0
    W = rng.standard_normal((5, 3, 3))
    W = W + np.swapaxes(W, 1, 2)
    Z = logdet_prox(W, rho)
    for Wi, Zi in zip(W, Z):
        assert np.all(np.linalg.eigvalsh(Zi) > 0)
        assert_allclose(rho * (Zi - Wi), np.linalg.inv(Zi), atol=1e-10)


def test_logdet_prox_scalar_formula():
    z = logdet_prox(np.array([[1.5]]), 4.0)
    assert z[0, 0] == pytest.approx(0.5 * (1.5 + np.sqrt(1.5 ** 2 + 1.0)))


def test_precompute_M_inverts_system(rng):
    N, K, d = 6, 4, 2
    A = rng.standard_normal((N, K))
    J = rng.standard_normal((N, K, d))
    rho = 1.5
    H = rho * (np.eye(K) + sum(np.outer(a, a) + j @ j.T for a, j in zip(A, J)) / N)
    assert_allclose(precompute_M(A, J, rho) @ H, np.eye(K), atol=1e-10)


def test_update_B_matches_blockwise_sum(rng):
    N, d, K, rho = 3, 2, 5, 0.7
    A = rng.standard_normal((N, K))
    J = rng.standard_normal((N, K, d))
    state = AdmmState(
        B=np.zeros((d, K)), F=rng.standard_normal((N, d, K)), Z=rng.standard_normal((N, d, d)),
        p=rng.standard_normal((N, d)), gamma=rng.standard_normal((N, d)), beta=rng.standard_normal((N, d, d)),
        alpha=rng.standard_normal((N, d, K)), A=A, J=J, M=precompute_M(A, J, rho), rho=rho,
    )
    total = np.zeros((d, K))
    for i in range(N):
        total += rho * state.F[i] + state.alpha[i]
        total += np.outer(rho * state.p[i] + state.gamma[i], A[i])
        total += (rho * state.Z[i] + state.beta[i]) @ J[i].T
    assert_allclose(update_B(state), (total / N) @ state.M, atol=1e-12)


def _random_state(rng, basis, N, rho, continuity=None):
    d, K = basis.dim, basis.size
    X = sample_laplacian(basis.prior, N, 3).samples
    A, J = basis.evaluate_batch(X), basis.jacobian_batch(X)
    return AdmmState(
        B=np.zeros((d, K)), F=rng.standard_normal((N, d, K)), Z=rng.standard_normal((N, d, d)),
        p=rng.standard_normal((N, d)), gamma=rng.standard_normal((N, d)), beta=rng.standard_normal((N, d, d)),
        alpha=rng.standard_normal((N, d, K)), A=A, J=J, M=precompute_M(A, J, rho, continuity), rho=rho,
        continuity=continuity,
    )


def test_constrained_update_B_is_continuous_minimizer(rng):
    basis = build_multi_index_set(2, 3)
    Q = continuity_basis(basis)
    rho = 1.3
    state = _random_state(rng, basis, 12, rho, Q)
    B = update_B(state)
    assert_allclose(B @ Q, 0.0, atol=1e-10)
    assert_allclose(B @ basis.continuity_constraints().T, 0.0, atol=1e-10)

    # stationarity: the gradient residual lies in the span of the constraint rows
    N, K = state.A.shape
    Jr = state.J.transpose(1, 0, 2).reshape(K, -1)
    H = rho * (np.eye(K) + (state.A.T @ state.A + Jr @ Jr.T) / N)
    unconstrained = update_B(replace(state, M=precompute_M(state.A, state.J, rho)))
    grad = B @ H - unconstrained @ H
    assert_allclose(grad - (grad @ Q) @ Q.T, 0.0, atol=1e-8)


def test_identity_satisfies_continuity():
    for d, order in [(1, 3), (2, 3), (3, 2)]:
        basis = build_multi_index_set(d, order)
        assert_allclose(basis.identity_coefficients() @ basis.continuity_constraints().T, 0.0, atol=1e-14)


def test_update_F_and_duals(rng):
    N, d, K, rho = 4, 2, 3, 0.8
    blk = AdmmBlock(
        F=rng.standard_normal((N, d, K)), Z=rng.standard_normal((N, d, d)), p=rng.standard_normal((N, d)),
        gamma=rng.standard_normal((N, d)), beta=rng.standard_normal((N, d, d)),
        alpha=rng.standard_normal((N, d, K)), A=rng.standard_normal((N, K)), J=rng.standard_normal((N, K, d)),
    )
    B = rng.standard_normal((d, K))
    assert_allclose(update_F(blk.alpha, B, rho), B - blk.alpha / rho)
    gamma, beta, alpha = update_duals(blk, B, rho)
    for i in range(N):
        assert_allclose(gamma[i], blk.gamma[i] + rho * (blk.p[i] - B @ blk.A[i]), atol=1e-12)
        assert_allclose(beta[i], blk.beta[i] + rho * (blk.Z[i] - B @ blk.J[i]), atol=1e-12)
        assert_allclose(alpha[i], blk.alpha[i] + rho * (blk.F[i] - B), atol=1e-12)


def test_update_Z_scalar_example():
    Z = update_Z(np.array([[1.5]]), np.array([[1.0]]), np.zeros((1, 1)), 1.0)
    assert Z[0, 0] == pytest.approx(2.0)


def test_update_Z_subtracts_scaled_dual(rng):
    B = rng.standard_normal((2, 4))
    J = rng.standard_normal((3, 4, 2))
    beta = rng.standard_normal((3, 2, 2))
    assert_allclose(update_Z(B, J, beta, 2.0), logdet_prox(np.matmul(B, J) - beta / 2.0, 2.0))


def test_chunks_cover_all_blocks():
    slices = _chunks(10, 4)
    covered = np.concatenate([np.arange(10)[sl] for sl in slices])
    assert_array_equal(covered, np.arange(10))
    assert len(_chunks(3, 8)) == 3


def test_empirical_objective_flags_orientation_reversal(prior_only_problem):
    basis = build_multi_index_set(1, 2)
    X = sample_laplacian(LaplacianPrior(1), 20, 0).samples
    A, J = basis.evaluate_batch(X), basis.jacobian_batch(X)
    B = basis.identity_coefficients()
    ok = empirical_objective(B, prior_only_problem, A, J)
    assert ok.feasible
    assert ok.value == pytest.approx(np.mean(np.abs(X)))
    bad = empirical_objective(-B, prior_only_problem, A, J)
    assert not bad.feasible and bad.value == np.inf


def test_initial_state_identity(rng):
    g = LassoObjectiveG(rng.standard_normal((8, 2)), rng.standard_normal(8), lam=1.0)
    basis = build_multi_index_set(2, 2, rate=g.tau)
    train = sample_laplacian(LaplacianPrior(2, g.tau), 15, 1)
    state = initial_state(basis, train, AdmmConfig())
    assert_allclose(state.p, train.samples, atol=1e-12)
    assert state.F.shape == (15, 2, basis.size)
    assert np.all(np.linalg.eigvalsh(state.Z) > 0)


def test_config_validation():
    with pytest.raises(InvalidArgumentError):
        AdmmConfig(rho=0.0)
    with pytest.raises(InvalidArgumentError):
        AdmmConfig(solver="newton")
    with pytest.raises(InvalidArgumentError):
        AdmmConfig(init_mode="zeros")


# --- map evaluation ---

def test_identity_map_diagnostics(prior_only_problem):
    basis = build_multi_index_set(1, 3)
    tmap = TransportMap(basis.identity_coefficients(), basis, lam=1.0)
    assert apply_map(tmap, np.array([-0.3])) == pytest.approx([-0.3])
    assert check_monotonicity(tmap, n=200, seed=2) == 1.0
    res = jacobian_equation_residual(tmap, prior_only_problem, sample_laplacian(LaplacianPrior(1), 300, 5))
    assert res.valid.all()
    assert res.dispersion() < 1e-10
    assert_allclose(res.values, np.log(0.5), atol=1e-10)


def test_folded_map_is_not_monotone():
    # positive slope everywhere but S(0-) > S(0+): sign coefficients sum to -1.141
    basis = build_multi_index_set(1, 3)
    folded = np.array([[0.018, 0.322, -0.049, -1.187, -0.015, -0.276, 0.06]])
    tmap = TransportMap(folded, basis, lam=1.0)
    lower = apply_map(tmap, np.array([-1e-9]))[0]
    upper = apply_map(tmap, np.array([1e-9]))[0]
    assert lower > upper
    gaps = continuity_gaps(tmap, sample_laplacian(LaplacianPrior(1), 50, 0))
    assert_allclose(gaps, 2.0 * (0.322 - 1.187 - 0.276), atol=1e-12)
    assert check_monotonicity(tmap, n=500, seed=1) == 0.0


def test_continuity_gaps_vanish_for_identity():
    basis = build_multi_index_set(2, 3)
    tmap = TransportMap(basis.identity_coefficients(), basis, lam=1.0)
    gaps = continuity_gaps(tmap, sample_laplacian(LaplacianPrior(2), 40, 0))
    assert gaps.shape == (40, 2)
    assert_allclose(gaps, 0.0, atol=1e-12)


def test_map_rejects_mismatched_coefficients():
    basis = build_multi_index_set(2, 2)
    with pytest.raises(InvalidArgumentError):
        TransportMap(np.zeros((2, 3)), basis, lam=1.0)


# --- solver ---

def test_run_admm_reports_progress(prior_only_problem):
    records = []
    basis = build_multi_index_set(1, 2)
    train = sample_laplacian(LaplacianPrior(1), 30, 0)
    tmap = run_admm(prior_only_problem, train, basis, AdmmConfig(max_iter=5), callback=records.append)
    assert len(records) == tmap.iterations <= 5
    assert set(records[0]) == {"iteration", "objective", "primal_residual", "b_change", "rho"}
    assert np.all(np.isfinite(tmap.coeffs))
    assert tmap.metadata["n_train"] == 30


def test_consensus_point_is_a_fixed_point(prior_only_problem):
    basis = build_multi_index_set(1, 3)
    train = sample_laplacian(LaplacianPrior(1), 50, 0)
    cfg = AdmmConfig()
    state = initial_state(basis, train, cfg)
    state.Z = np.matmul(state.B, state.J)
    B_start = state.B.copy()
    admm_iteration(state, PFactorCache(prior_only_problem, cfg.rho), cfg)
    assert_allclose(state.B, B_start, atol=1e-8)


def test_non_finite_state_stops_iteration(prior_only_problem, monkeypatch):
    basis = build_multi_index_set(1, 3)
    cfg = AdmmConfig()
    state = initial_state(basis, sample_laplacian(LaplacianPrior(1), 20, 0), cfg)
    monkeypatch.setattr(transport_admm, "update_F", lambda alpha, B, rho: np.full(alpha.shape, np.nan))
    with pytest.raises(NumericalError, match="alpha at iteration 1"):
        admm_iteration(state, PFactorCache(prior_only_problem, cfg.rho), cfg)


def test_Z_blocks_stay_positive_definite(small_regression):
    phi, y = small_regression
    g = LassoObjectiveG(phi[:, :2], y, lam=1.0)
    basis = build_multi_index_set(2, 3, rate=g.tau)
    train = sample_laplacian(LaplacianPrior(2, g.tau), 30, 0)
    cfg = AdmmConfig(init_mode="random", init_seed=2)
    state = initial_state(basis, train, cfg)
    cache = PFactorCache(g, cfg.rho)
    for _ in range(15):
        admm_iteration(state, cache, cfg)
        assert np.all(np.linalg.eigvalsh(state.Z) > 0)


def test_fitted_map_is_continuous(small_regression):
    phi, y = small_regression
    g = LassoObjectiveG(phi[:, :2], y, lam=1.0)
    tmap, _ = _fit(g, order=3, max_iter=20, init_mode="random", init_seed=5, balance_residuals=True)
    C = tmap.basis.continuity_constraints()
    assert_allclose(tmap.coeffs @ C.T, 0.0, atol=1e-9)
    gaps = continuity_gaps(tmap, sample_laplacian(LaplacianPrior(2, g.tau), 100, 3))
    assert np.max(np.abs(gaps)) < 1e-8


def test_run_admm_rejects_rate_mismatch(prior_only_problem):
    basis = build_multi_index_set(1, 2, rate=2.0)
    train = sample_laplacian(LaplacianPrior(1, 2.0), 10, 0)
    with pytest.raises(InvalidArgumentError):
        run_admm(prior_only_problem, train, basis)


@pytest.mark.parametrize("solver", ["cd", "girls"])
def test_worker_count_does_not_change_result(small_regression, solver):
    phi, y = small_regression
    g = LassoObjectiveG(phi[:, :2], y, lam=1.0)
    one, _ = _fit(g, n_train=40, max_iter=6, workers=1, solver=solver)
    three, _ = _fit(g, n_train=40, max_iter=6, workers=3, solver=solver)
    assert_array_equal(one.coeffs, three.coeffs)


def test_random_init_is_seeded(prior_only_problem):
    a, _ = _fit(prior_only_problem, max_iter=3, init_mode="random", init_seed=4)
    b, _ = _fit(prior_only_problem, max_iter=3, init_mode="random", init_seed=4)
    assert_array_equal(a.coeffs, b.coeffs)


def test_residual_balancing_runs(small_regression):
    phi, y = small_regression
    g = LassoObjectiveG(phi[:, :2], y, lam=1.0)
    tmap, _ = _fit(g, max_iter=10, balance_residuals=True)
    assert tmap.metadata["final_rho"] > 0
    assert all(r["rho"] > 0 for r in tmap.residual_history)


# --- acceptance ---

@pytest.mark.slow
def test_identity_recovery(prior_only_problem):
    tmap, _ = _fit(prior_only_problem, order=3, n_train=500)
    pushed = push_samples(tmap, 10_000, seed=99)
    assert ks_distance(pushed[:, 0], "laplace") < 0.05
    assert np.max(np.abs(tmap.coeffs - tmap.basis.identity_coefficients())) < 0.05


@pytest.mark.slow
def test_one_dimensional_posterior(one_d_problem):
    tmap, train = _fit(one_d_problem, order=3, n_train=500, max_iter=500)
    assert tmap.converged
    assert tmap.residual_history[-1]["primal_residual"] < 1e-3
    final = tmap.residual_history[-1]["objective"]
    assert final <= tmap.metadata["initial_objective"]

    cdf = quadrature_posterior_cdf(one_d_problem, np.linspace(-15, 15, 100_001))
    assert ks_distance(push_samples(tmap, 10_000, seed=1)[:, 0], cdf) < 0.05

    held_out = sample_laplacian(LaplacianPrior(1, one_d_problem.tau), 1000, 2)
    res = jacobian_equation_residual(tmap, one_d_problem, held_out)
    log_prior = LaplacianPrior(1, one_d_problem.tau).log_density(held_out.samples)
    assert res.dispersion() < 0.1 * np.std(log_prior)
