"""
Consensus ADMM for the transport-map coefficients.

Minimizes (1/N) sum_i [ g(B A_i) - log det(B J_i) ] over the d x K coefficient
matrix B, with per-sample copies F_i = B, p_i = B A_i and SPD Z_i = B J_i.
The B-update is a barrier; every per-sample block update after it touches
only that block's slots, so blocks are split across worker threads and the
result does not depend on the split.
"""
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable, NamedTuple, Optional

import numpy as np
from scipy import linalg

from config import (
    DEFAULT_INNER_MAX_SWEEPS, DEFAULT_INNER_TOL, DEFAULT_MAX_ITER, DEFAULT_RHO, DEFAULT_SIGMA2,
    DEFAULT_TOL_B, DEFAULT_TOL_RES,
)
from .base import (
    InvalidArgumentError, NumericalError, as_matrix, as_vector, check_finite, make_rng, require_count,
    require_positive,
)
from .lasso_solvers import PFactorCache, SOLVERS, solve_p_batch
from .prior_pce import LaplacianPrior, PceBasis, SampleBatch, sample_laplacian

logger = logging.getLogger(__name__)


# ============================================================================
#  TYPES
# ============================================================================

@dataclass(frozen=True)
class LassoObjectiveG:
    """Negative log posterior up to a constant: (1/(2 s2)) ||y - Phi x||^2 + tau ||x||_1."""
    phi: np.ndarray
    y: np.ndarray
    lam: float
    sigma2: float = DEFAULT_SIGMA2

    def __post_init__(self):
        phi = as_matrix("phi", self.phi)
        y = as_vector("y", self.y, dim=phi.shape[0])
        require_positive("lambda", self.lam)
        require_positive("sigma2", self.sigma2)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "y", y)

    @property
    def dim(self):
        return self.phi.shape[1]

    @property
    def tau(self):
        """Prior rate; lam = 2 tau sigma2."""
        return self.lam / (2.0 * self.sigma2)

    def with_lambda(self, lam):
        return replace(self, lam=float(lam))

    def value_batch(self, X):
        X = np.atleast_2d(X)
        resid = self.y[None, :] - X @ self.phi.T
        return (resid ** 2).sum(axis=1) / (2.0 * self.sigma2) + self.tau * np.abs(X).sum(axis=1)

    def value(self, x):
        return float(self.value_batch(np.asarray(x, dtype=float)[None, :])[0])


@dataclass
class AdmmConfig:
    rho: float = DEFAULT_RHO
    max_iter: int = DEFAULT_MAX_ITER
    tol_b: float = DEFAULT_TOL_B
    tol_res: float = DEFAULT_TOL_RES
    init_mode: str = "identity"
    init_seed: int = 0
    workers: int = 1
    solver: str = "cd"
    inner_tol: float = DEFAULT_INNER_TOL
    inner_max_sweeps: int = DEFAULT_INNER_MAX_SWEEPS
    balance_residuals: bool = False

    def __post_init__(self):
        require_positive("rho", self.rho)
        require_positive("tol_b", self.tol_b)
        require_positive("tol_res", self.tol_res)
        require_count("max_iter", self.max_iter)
        require_count("workers", self.workers)
        if self.init_mode not in ("identity", "random"):
            raise InvalidArgumentError(f"Unknown init mode: {self.init_mode}")
        if self.solver not in SOLVERS:
            raise InvalidArgumentError(f"Unknown solver: {self.solver}")


@dataclass
class AdmmBlock:
    """One block's variables, or a stack of blocks along a leading axis."""
    F: np.ndarray
    Z: np.ndarray
    p: np.ndarray
    gamma: np.ndarray
    beta: np.ndarray
    alpha: np.ndarray
    A: np.ndarray
    J: np.ndarray


@dataclass
class AdmmState:
    B: np.ndarray
    F: np.ndarray          # (N, d, K)
    Z: np.ndarray          # (N, d, d)
    p: np.ndarray          # (N, d)
    gamma: np.ndarray      # (N, d)
    beta: np.ndarray       # (N, d, d)
    alpha: np.ndarray      # (N, d, K)
    A: np.ndarray          # (N, K)
    J: np.ndarray          # (N, K, d)
    M: np.ndarray          # (K, K)
    rho: float
    iteration: int = 0
    residual_history: list = field(default_factory=list)
    continuity: Optional[np.ndarray] = None   # (K, r) orthonormal, B @ continuity == 0

    @property
    def n_blocks(self):
        return self.A.shape[0]

    def block(self, sl):
        return AdmmBlock(F=self.F[sl], Z=self.Z[sl], p=self.p[sl], gamma=self.gamma[sl],
                         beta=self.beta[sl], alpha=self.alpha[sl], A=self.A[sl], J=self.J[sl])


@dataclass
class TransportMap:
    coeffs: np.ndarray
    basis: PceBasis
    lam: float
    sigma2: float = DEFAULT_SIGMA2
    converged: bool = True
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.coeffs = np.asarray(self.coeffs, dtype=float)
        if self.coeffs.shape != (self.basis.dim, self.basis.size):
            raise InvalidArgumentError(
                f"coefficients have shape {self.coeffs.shape}, basis needs {(self.basis.dim, self.basis.size)}")
        if not np.all(np.isfinite(self.coeffs)):
            raise NumericalError("transport map has non-finite coefficients")

    @property
    def dim(self):
        return self.basis.dim

    @property
    def tau(self):
        return self.basis.prior.rate

    def apply_batch(self, X):
        return self.basis.evaluate_batch(X) @ self.coeffs.T

    def jacobian_batch(self, X):
        return np.matmul(self.coeffs, self.basis.jacobian_batch(X))


class ObjectiveValue(NamedTuple):
    value: float
    feasible: bool


class JacobianResidual(NamedTuple):
    values: np.ndarray     # nan where the map Jacobian is not positive
    valid: np.ndarray

    def dispersion(self):
        return float(np.std(self.values[self.valid]))


# ============================================================================
#  UPDATE PRIMITIVES
# ============================================================================

def continuity_basis(basis):
    """Orthonormal basis Q of the rows of basis.continuity_constraints(), shape (K, r)."""
    C = basis.continuity_constraints()
    if C.shape[0] == 0:
        return np.zeros((basis.size, 0))
    return linalg.orth(C.T)


def project_continuous(B, Q):
    """Euclidean projection of B onto {B : B Q = 0}."""
    if Q is None or Q.shape[1] == 0:
        return B
    return B - (B @ Q) @ Q.T


def precompute_M(A_tables, J_tables, rho, continuity=None):
    """[rho (I + (1/N) sum_i A_i A_i^T + J_i J_i^T)]^{-1} via Cholesky.

    With `continuity` (K x r, orthonormal) the returned matrix solves the
    B-step under B Q = 0 instead:  M - M Q (Q^T M Q)^{-1} Q^T M.
    """
    require_positive("rho", rho)
    A = np.atleast_2d(np.asarray(A_tables, dtype=float))
    J = np.asarray(J_tables, dtype=float)
    if J.ndim == 2:
        J = J[None]
    N, K = A.shape
    if J.shape[:2] != (N, K):
        raise InvalidArgumentError(f"J tables have shape {J.shape}, expected ({N}, {K}, d)")
    Jr = J.transpose(1, 0, 2).reshape(K, -1)
    H = rho * (np.eye(K) + (A.T @ A + Jr @ Jr.T) / N)
    try:
        factor = linalg.cho_factor(H, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("ADMM system matrix is not positive definite") from exc
    M = linalg.cho_solve(factor, np.eye(K))
    if continuity is not None and continuity.shape[1] > 0:
        MQ = M @ continuity
        try:
            reduced = linalg.cho_factor(continuity.T @ MQ, lower=True)
        except linalg.LinAlgError as exc:
            raise NumericalError("continuity-constrained B-step is singular") from exc
        M = M - MQ @ linalg.cho_solve(reduced, MQ.T)
    return 0.5 * (M + M.T)


def update_B(state):
    """Average of the per-block consensus terms, times M.

    When state.M carries the continuity constraint the result is the
    constrained minimizer, so B @ state.continuity stays zero.
    """
    N = state.n_blocks
    rho = state.rho
    d = state.B.shape[0]
    K = state.A.shape[1]
    total = rho * state.F.sum(axis=0) + state.alpha.sum(axis=0)
    total += (rho * state.p + state.gamma).T @ state.A
    ZB = (rho * state.Z + state.beta).transpose(1, 0, 2).reshape(d, N * d)
    Jt = state.J.transpose(0, 2, 1).reshape(N * d, K)
    total += ZB @ Jt
    return (total / N) @ state.M


def update_F(alpha_i, B_new, rho):
    return B_new - alpha_i / rho


def logdet_prox(W, rho):
    """argmin over SPD Z of -log det Z + (rho/2) ||Z - W||_F^2 (W stacked or single)."""
    W = 0.5 * (W + np.swapaxes(W, -1, -2))
    try:
        eigvals, Q = np.linalg.eigh(W)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("eigendecomposition failed in the Z-update") from exc
    z = 0.5 * (eigvals + np.sqrt(eigvals ** 2 + 4.0 / rho))
    return np.matmul(Q * z[..., None, :], np.swapaxes(Q, -1, -2))


def update_Z(B_new, J_i, beta_i, rho):
    """Log-det prox at W = sym(B J_i - beta_i / rho)."""
    return logdet_prox(np.matmul(B_new, J_i) - beta_i / rho, rho)


def _dual_step(block, BA, BJ, B_new, rho):
    gamma = block.gamma + rho * (block.p - BA)
    beta = block.beta + rho * (block.Z - BJ)
    alpha = block.alpha + rho * (block.F - B_new)
    return gamma, beta, alpha


def update_duals(block, B_new, rho):
    """Dual ascent on the three consensus constraints."""
    BA = np.matmul(block.A, B_new.T)
    BJ = np.matmul(B_new, block.J)
    return _dual_step(block, BA, BJ, B_new, rho)


def empirical_objective(B, g, A_tables, J_tables):
    """(1/N) sum_i [ g(B A_i) - log det(B J_i) ]; +inf when some det <= 0."""
    A = np.atleast_2d(A_tables)
    X = A @ np.asarray(B).T
    sign, logdet = np.linalg.slogdet(np.matmul(B, J_tables))
    if np.any(sign <= 0):
        return ObjectiveValue(math.inf, False)
    return ObjectiveValue(float(np.mean(g.value_batch(X) - logdet)), True)


# ============================================================================
#  MAP EVALUATION
# ============================================================================

def apply_map(tmap, x):
    """S(x) = B A(x)."""
    x = as_vector("x", x, dim=tmap.dim)
    return tmap.apply_batch(x[None, :])[0]


def jacobian_equation_residual(tmap, g, xs):
    """log p(x) - [ -g(S(x)) + log det J_S(x) ] per sample.

    Constant across x for an exact map (the log normalizer of the posterior);
    its spread measures how far the map is from pushing the prior onto it.
    """
    X = xs.samples if isinstance(xs, SampleBatch) else as_matrix("xs", xs, cols=tmap.dim)
    prior = LaplacianPrior(tmap.dim, tmap.tau)
    sign, logdet = np.linalg.slogdet(tmap.jacobian_batch(X))
    valid = sign > 0
    values = prior.log_density(X) + g.value_batch(tmap.apply_batch(X)) - logdet
    values = np.where(valid, values, np.nan)
    return JacobianResidual(values=values, valid=valid)


def continuity_gaps(tmap, xs):
    """S_j(x with x_j = 0+) - S_j(x with x_j = 0-) for every row and j; shape (N, d).

    Zero for a continuous map; negative where S_j folds back across x_j = 0.
    """
    X = xs.samples if isinstance(xs, SampleBatch) else as_matrix("xs", xs, cols=tmap.dim)
    tiny = np.finfo(float).tiny
    gaps = np.empty(X.shape)
    for j in range(tmap.dim):
        upper, lower = X.copy(), X.copy()
        upper[:, j] = tiny
        lower[:, j] = -tiny
        gaps[:, j] = tmap.apply_batch(upper)[:, j] - tmap.apply_batch(lower)[:, j]
    return gaps


def check_monotonicity(tmap, n=1000, seed=0):
    """Fraction of held-out prior draws where det J_S(x) > 0 and no S_j jumps down at x_j = 0."""
    batch = sample_laplacian(LaplacianPrior(tmap.dim, tmap.tau), n, seed)
    sign, _ = np.linalg.slogdet(tmap.jacobian_batch(batch.samples))
    tol = 1e-9 * (1.0 + np.abs(tmap.coeffs).max())
    no_fold = np.all(continuity_gaps(tmap, batch) >= -tol, axis=1)
    return float(np.mean((sign > 0) & no_fold))


# ============================================================================
#  SOLVER
# ============================================================================

def initial_state(basis, train, cfg, init_map=None):
    X = train.samples
    A = basis.evaluate_batch(X)
    J = basis.jacobian_batch(X)
    N, K = A.shape
    d = basis.dim
    Q = continuity_basis(basis)
    if init_map is not None:
        if init_map.coeffs.shape != (d, K):
            raise InvalidArgumentError("warm-start map does not match the basis")
        B = init_map.coeffs.copy()
    else:
        B = basis.identity_coefficients()
        if cfg.init_mode == "random":
            rng = make_rng(cfg.init_seed)
            B = B + 0.1 * rng.standard_normal(B.shape) / basis.prior.rate
    B = project_continuous(B, Q)
    F = np.broadcast_to(B, (N, d, K)).copy()
    p = A @ B.T
    Z = update_Z(B, J, np.zeros((N, d, d)), cfg.rho)
    return AdmmState(
        B=B, F=F, Z=Z, p=p,
        gamma=np.zeros((N, d)), beta=np.zeros((N, d, d)), alpha=np.zeros((N, d, K)),
        A=A, J=J, M=precompute_M(A, J, cfg.rho, Q), rho=cfg.rho, continuity=Q,
    )


def _chunks(n, workers):
    bounds = np.linspace(0, n, min(workers, n) + 1).astype(int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _update_blocks(state, B_new, BA_all, BJ_all, sl, cache, cfg, residuals):
    """F, p, Z and dual updates on blocks `sl`; writes only into those slots."""
    rho = state.rho
    blk = state.block(sl)
    BA, BJ = BA_all[sl], BJ_all[sl]
    state.F[sl] = update_F(blk.alpha, B_new, rho)
    linear = cache.linear_term(BA, blk.gamma)
    P, _, _ = solve_p_batch(cache.gram, linear, cache.l1_weight, cfg.solver, warm_start=blk.p,
                            tol=cfg.inner_tol, max_sweeps=cfg.inner_max_sweeps)
    state.p[sl] = P
    state.Z[sl] = logdet_prox(BJ - blk.beta / rho, rho)
    gamma, beta, alpha = _dual_step(state.block(sl), BA, BJ, B_new, rho)
    state.gamma[sl], state.beta[sl], state.alpha[sl] = gamma, beta, alpha
    residuals[sl, 0] = np.linalg.norm(BA - state.p[sl], axis=1)
    residuals[sl, 1] = np.linalg.norm(BJ - state.Z[sl], axis=(1, 2))
    residuals[sl, 2] = np.linalg.norm(state.F[sl] - B_new, axis=(1, 2))


def admm_iteration(state, cache, cfg, pool=None):
    """One full sweep: B barrier, then every block. Returns (B_old, primal residual)."""
    B_old = state.B
    B_new = update_B(state)
    # shared products are formed once on the full stack so no result depends on the split
    BA_all = state.A @ B_new.T
    BJ_all = np.matmul(B_new, state.J)
    N = state.n_blocks
    residuals = np.zeros((N, 3))
    slices = _chunks(N, cfg.workers)
    if pool is None or len(slices) == 1:
        for sl in slices:
            _update_blocks(state, B_new, BA_all, BJ_all, sl, cache, cfg, residuals)
    else:
        futures = [pool.submit(_update_blocks, state, B_new, BA_all, BJ_all, sl, cache, cfg, residuals)
                   for sl in slices]
        for fut in futures:
            fut.result()
    state.B = B_new
    state.iteration += 1
    for name in ("B", "p", "Z", "gamma", "beta", "alpha", "F"):
        check_finite(f"{name} at iteration {state.iteration}", getattr(state, name))
    return B_old, float(residuals.max())


def _rebalance(state, g, primal, dual):
    """Double or halve rho when one residual dominates the other by 10x."""
    if primal > 10.0 * dual:
        new_rho = 2.0 * state.rho
    elif dual > 10.0 * primal:
        new_rho = 0.5 * state.rho
    else:
        return None
    state.rho = new_rho
    state.M = precompute_M(state.A, state.J, new_rho, state.continuity)
    logger.debug("rho rebalanced to %g", new_rho)
    return PFactorCache(g, new_rho)


def run_admm(g, train, basis, cfg=None, init_map=None, callback: Optional[Callable[[dict], None]] = None):
    """Fit the transport map coefficients by consensus ADMM.

    Stops when the relative change of B is below tol_b and the largest primal
    residual is below tol_res. At max_iter the feasible iterate with the
    lowest empirical objective is returned, flagged as not converged.
    """
    cfg = cfg or AdmmConfig()
    if basis.dim != g.dim or train.dim != g.dim:
        raise InvalidArgumentError("basis, training samples and objective disagree on the dimension")
    if not math.isclose(train.rate, g.tau, rel_tol=1e-9) or not math.isclose(basis.prior.rate, g.tau, rel_tol=1e-9):
        raise InvalidArgumentError(
            f"training prior rate {train.rate} / basis rate {basis.prior.rate} must equal tau = {g.tau}")

    state = initial_state(basis, train, cfg, init_map)
    cache = PFactorCache(g, state.rho)
    start = empirical_objective(state.B, g, state.A, state.J)
    best_B, best_obj = state.B.copy(), start.value
    converged = False

    pool = ThreadPoolExecutor(max_workers=cfg.workers) if cfg.workers > 1 else None
    try:
        for _ in range(cfg.max_iter):
            B_old, primal = admm_iteration(state, cache, cfg, pool)
            diff = np.linalg.norm(state.B - B_old)
            b_change = diff / max(np.linalg.norm(B_old), 1e-12)
            obj = empirical_objective(state.B, g, state.A, state.J)
            record = {
                "iteration": state.iteration,
                "objective": obj.value,
                "primal_residual": primal,
                "b_change": float(b_change),
                "rho": state.rho,
            }
            state.residual_history.append(record)
            logger.debug("admm iter %d obj=%.6g primal=%.3g dB=%.3g", state.iteration, obj.value, primal, b_change)
            if callback is not None:
                callback(record)
            if obj.feasible and obj.value <= best_obj:
                best_B, best_obj = state.B.copy(), obj.value
            if b_change < cfg.tol_b and primal < cfg.tol_res:
                converged = True
                break
            if cfg.balance_residuals:
                new_cache = _rebalance(state, g, primal, state.rho * diff)
                if new_cache is not None:
                    cache = new_cache
    finally:
        if pool is not None:
            pool.shutdown()

    if converged:
        coeffs = state.B
        logger.info("ADMM converged in %d iterations (objective %.6g)", state.iteration, state.residual_history[-1]["objective"])
    else:
        coeffs = best_B if math.isfinite(best_obj) else state.B
        logger.warning("ADMM stopped at max_iter=%d without converging", cfg.max_iter)

    return TransportMap(
        coeffs=coeffs.copy(), basis=basis, lam=g.lam, sigma2=g.sigma2,
        converged=converged, iterations=state.iteration,
        residual_history=state.residual_history,
        metadata={
            "n_train": train.n, "train_seed": train.seed, "rho": cfg.rho, "final_rho": state.rho,
            "solver": cfg.solver, "init_mode": "warm" if init_map is not None else cfg.init_mode,
            "initial_objective": start.value,
        },
    )
