"""
Weighted l1-regularized least squares.

Every solver here minimizes ||y - Phi x||^2 + lam * ||x||_1 (note: no 1/2 on
the quadratic). The ADMM p-update is reduced to the same form by completing
the square against a cached Cholesky factor.
"""
import logging
from dataclasses import dataclass
from typing import TYPE_CHECKING, Optional

import numpy as np
from scipy import linalg

from config import DEFAULT_GIRLS_EPSILON, DEFAULT_INNER_MAX_SWEEPS, DEFAULT_INNER_TOL
from .base import InvalidArgumentError, NumericalError, as_matrix, as_vector, require_positive

if TYPE_CHECKING:
    from .transport_admm import LassoObjectiveG

logger = logging.getLogger(__name__)

SOLVERS = ("cd", "girls")


@dataclass(frozen=True)
class LassoProblem:
    design: np.ndarray
    response: np.ndarray
    l1_weight: float

    def __post_init__(self):
        design = as_matrix("design", self.design)
        response = as_vector("response", self.response, dim=design.shape[0])
        if not np.isfinite(self.l1_weight) or self.l1_weight < 0:
            raise InvalidArgumentError(f"l1_weight must be >= 0, got {self.l1_weight}")
        object.__setattr__(self, "design", design)
        object.__setattr__(self, "response", response)

    @property
    def dim(self):
        return self.design.shape[1]

    def objective(self, x):
        r = self.response - self.design @ x
        return float(r @ r + self.l1_weight * np.abs(x).sum())

    def null_weight(self):
        """Smallest l1 weight at which x = 0 is optimal."""
        return float(2.0 * np.max(np.abs(self.design.T @ self.response), initial=0.0))


@dataclass
class LassoSolution:
    coef: np.ndarray
    converged: bool
    iterations: int
    objective: float


def soft_threshold(v, t):
    """sign(v) * max(|v| - t, 0), elementwise."""
    if np.any(np.asarray(t) < 0):
        raise InvalidArgumentError("threshold must be non-negative")
    out = np.sign(v) * np.maximum(np.abs(v) - t, 0.0)
    return out[()] if isinstance(out, np.ndarray) else out


# ============================================================================
#  GRAM-FORM SOLVERS (batched over rows of the linear term)
# ============================================================================

def gram_lasso_cd(gram, linear, l1_weight, tol=DEFAULT_INNER_TOL, max_sweeps=DEFAULT_INNER_MAX_SWEEPS,
                  warm_start=None):
    """Cyclic coordinate descent on p^T G p - 2 c^T p + lam ||p||_1.

    `linear` holds one c per row; each row stops on its own once its largest
    coordinate change drops below tol, so a row's answer does not depend on
    which other rows share the batch.

    Returns (P, converged_mask, sweeps_per_row).
    """
    C = np.atleast_2d(np.asarray(linear, dtype=float))
    n, d = C.shape
    P = np.zeros((n, d)) if warm_start is None else np.array(np.atleast_2d(warm_start), dtype=float)
    diag = np.diag(gram).copy()
    if np.any(diag <= 0):
        raise NumericalError("Gram matrix has a non-positive diagonal")
    half = 0.5 * l1_weight
    active = np.ones(n, dtype=bool)
    sweeps = np.zeros(n, dtype=int)
    for _ in range(max_sweeps):
        if not active.any():
            break
        rows = np.flatnonzero(active)
        Pa = P[rows]
        max_change = np.zeros(rows.size)
        for j in range(d):
            off = (Pa * gram[j]).sum(axis=1) - gram[j, j] * Pa[:, j]
            new = np.sign(C[rows, j] - off) * np.maximum(np.abs(C[rows, j] - off) - half, 0.0) / diag[j]
            max_change = np.maximum(max_change, np.abs(new - Pa[:, j]))
            Pa[:, j] = new
        P[rows] = Pa
        sweeps[rows] += 1
        active[rows] = max_change >= tol
    return P, ~active, sweeps


def gram_lasso_girls(gram, linear, l1_weight, epsilon=DEFAULT_GIRLS_EPSILON, tol=DEFAULT_INNER_TOL,
                     max_iter=DEFAULT_INNER_MAX_SWEEPS, warm_start=None):
    """Iteratively reweighted least squares for the same Gram-form objective.

    Each step solves (G + lam/2 * diag(1/max(|p_prev|, eps))) p = c, the
    majorize-minimize bound of the l1 term, so the objective never increases;
    a step that would increase it (round-off near the optimum) is rejected.
    """
    C = np.atleast_2d(np.asarray(linear, dtype=float))
    n, d = C.shape
    # broadcast products keep each row's arithmetic independent of the batch size
    unregularized = (C[:, :, None] * np.linalg.pinv(gram).T[None]).sum(axis=1)
    if warm_start is None:
        P = unregularized
    else:
        # an exact zero is a fixed point of the reweighting; restart those coordinates
        W = np.array(np.atleast_2d(warm_start), dtype=float)
        P = np.where(np.abs(W) > np.sqrt(epsilon), W, unregularized)

    def objective(Q):
        quad = ((Q[:, :, None] * gram[None]).sum(axis=1) * Q).sum(axis=1)
        return quad - 2.0 * (C * Q).sum(axis=1) + l1_weight * np.abs(Q).sum(axis=1)

    current = objective(P)
    active = np.ones(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    for _ in range(max_iter):
        if not active.any():
            break
        rows = np.flatnonzero(active)
        weights = 0.5 * l1_weight / np.maximum(np.abs(P[rows]), epsilon)
        system = np.broadcast_to(gram, (rows.size, d, d)).copy()
        system[:, np.arange(d), np.arange(d)] += weights
        try:
            new = np.linalg.solve(system, C[rows][..., None])[..., 0]
        except np.linalg.LinAlgError:
            ridge = 1e-10 * max(np.trace(gram), 1.0)
            system[:, np.arange(d), np.arange(d)] += ridge
            try:
                new = np.linalg.solve(system, C[rows][..., None])[..., 0]
            except np.linalg.LinAlgError as exc:
                raise NumericalError("weighted least-squares system is singular") from exc
        new_obj = objective(new)
        accept = new_obj <= current[rows] + 1e-15 * np.abs(current[rows])
        change = np.max(np.abs(new - P[rows]), axis=1)
        P[rows[accept]] = new[accept]
        current[rows[accept]] = new_obj[accept]
        iters[rows] += 1
        active[rows] = accept & (change >= tol)
    return P, ~active, iters


# ============================================================================
#  STANDALONE LASSO
# ============================================================================

def coordinate_descent_lasso(problem, tol=DEFAULT_INNER_TOL, max_sweeps=10000, warm_start=None):
    """Cyclic coordinate descent with a cached residual."""
    require_positive("tol", tol)
    Phi, y, lam = problem.design, problem.response, problem.l1_weight
    d = problem.dim
    col_sq = (Phi ** 2).sum(axis=0)
    x = np.zeros(d) if warm_start is None else as_vector("warm_start", warm_start, dim=d).copy()
    r = y - Phi @ x
    converged = False
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_change = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                new = 0.0
            else:
                rho_j = Phi[:, j] @ r + col_sq[j] * x[j]
                new = np.sign(rho_j) * max(abs(rho_j) - 0.5 * lam, 0.0) / col_sq[j]
            delta = new - x[j]
            if delta != 0.0:
                r -= delta * Phi[:, j]
                x[j] = new
                max_change = max(max_change, abs(delta))
        if max_change < tol:
            converged = True
            break
    if not converged:
        logger.warning("coordinate descent hit max_sweeps=%d", max_sweeps)
    return LassoSolution(coef=x, converged=converged, iterations=sweeps, objective=problem.objective(x))


def girls_lasso(problem, epsilon=DEFAULT_GIRLS_EPSILON, tol=DEFAULT_INNER_TOL, max_iter=500, warm_start=None):
    """Generalized IRLS: a sequence of weighted least-squares solves."""
    require_positive("epsilon", epsilon)
    require_positive("tol", tol)
    Phi, y = problem.design, problem.response
    gram = Phi.T @ Phi
    linear = Phi.T @ y
    if warm_start is not None:
        warm_start = as_vector("warm_start", warm_start, dim=problem.dim)[None, :]
    P, conv, iters = gram_lasso_girls(gram, linear[None, :], problem.l1_weight, epsilon, tol, max_iter,
                                      warm_start=warm_start)
    x = P[0]
    return LassoSolution(coef=x, converged=bool(conv[0]), iterations=int(iters[0]), objective=problem.objective(x))


def solve_lasso(problem, solver="cd", **kwargs):
    if solver == "cd":
        return coordinate_descent_lasso(problem, **kwargs)
    if solver == "girls":
        return girls_lasso(problem, **kwargs)
    raise InvalidArgumentError(f"Unknown solver: {solver}")


# ============================================================================
#  P-UPDATE REDUCTION
# ============================================================================

@dataclass(frozen=True)
class PSubproblem:
    phi_hat: np.ndarray
    y_hat: np.ndarray
    l1_weight: float

    def as_lasso(self):
        return LassoProblem(self.phi_hat, self.y_hat, self.l1_weight)


class PFactorCache:
    """Quantities of the p-update shared by every block of one ADMM run.

    With s = 2 sigma^2 the p-update objective, rescaled by s, is
        ||y - Phi p||^2 + lam ||p||_1 + s*rho/2 ||p - B A_i||^2 + s * gamma_i^T p
    so the Gram matrix is Phi^T Phi + (s rho / 2) I. For sigma^2 = 1/2 the
    scale is 1 and lam equals tau.
    """

    def __init__(self, g: "LassoObjectiveG", rho):
        require_positive("rho", rho)
        self.rho = float(rho)
        self.scale = 2.0 * g.sigma2
        self.l1_weight = float(g.lam)
        phi = g.phi
        d = phi.shape[1]
        self.gram = phi.T @ phi + 0.5 * self.scale * self.rho * np.eye(d)
        self.phity = phi.T @ g.y
        try:
            self.factor = linalg.cholesky(self.gram, lower=False)
        except linalg.LinAlgError as exc:
            raise NumericalError("Cholesky factorization of the p-update Gram matrix failed") from exc

    def linear_term(self, BA, gamma):
        """Phi_hat^T y_hat for one block (vectors) or many (rows)."""
        return self.phity + 0.5 * self.scale * (self.rho * BA - gamma)


def build_p_subproblem(g, B_new, A_i, gamma_i, rho, cache=None):
    """Lasso data (Phi_hat, y_hat) whose solution is the p-update of one block."""
    if cache is None or cache.rho != rho:
        cache = PFactorCache(g, rho)
    BA = np.asarray(B_new) @ np.asarray(A_i)
    c = cache.linear_term(BA, np.asarray(gamma_i, dtype=float))
    y_hat = linalg.solve_triangular(cache.factor, c, trans='T', lower=False)
    return PSubproblem(phi_hat=cache.factor, y_hat=y_hat, l1_weight=cache.l1_weight)


def solve_p_update(sub, solver="cd", warm_start: Optional[np.ndarray] = None,
                   tol=DEFAULT_INNER_TOL, max_sweeps=DEFAULT_INNER_MAX_SWEEPS):
    """argmin_p ||y_hat - Phi_hat p||^2 + lam ||p||_1."""
    gram = sub.phi_hat.T @ sub.phi_hat
    linear = sub.phi_hat.T @ sub.y_hat
    P, _, _ = solve_p_batch(gram, linear[None, :], sub.l1_weight, solver, warm_start, tol, max_sweeps)
    return P[0]


def solve_p_batch(gram, linear, l1_weight, solver="cd", warm_start=None,
                  tol=DEFAULT_INNER_TOL, max_sweeps=DEFAULT_INNER_MAX_SWEEPS):
    if solver == "cd":
        return gram_lasso_cd(gram, linear, l1_weight, tol, max_sweeps, warm_start)
    if solver == "girls":
        return gram_lasso_girls(gram, linear, l1_weight, tol=tol, max_iter=max_sweeps, warm_start=warm_start)
    raise InvalidArgumentError(f"Unknown solver: {solver}")
