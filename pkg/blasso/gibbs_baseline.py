"""
Three-step Gibbs sampler for the Bayesian Lasso with a scale-invariant prior
on sigma^2, used as the comparison baseline.

Hierarchy: y | x, s2 ~ N(Phi x, s2 I); x | t^2, s2 ~ N(0, s2 D_t);
t_j^2 ~ Exp(lambda_pc^2 / 2); pi(s2) ~ 1/s2.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import linalg

from config import DEFAULT_GIBBS_BURN_IN, DEFAULT_GIBBS_ITERS, DEFAULT_GIBBS_THIN, DEFAULT_SEED
from .base import (
    DegenerateInputError, NumericalError, as_matrix, as_vector, make_rng, require_count, require_positive,
)

logger = logging.getLogger(__name__)


@dataclass
class GibbsState:
    x: np.ndarray
    inv_t2: np.ndarray
    sigma2: float
    rng: np.random.Generator


@dataclass
class GibbsChain:
    draws: np.ndarray
    sigma2_draws: np.ndarray
    burn_in: int
    thin: int
    lambda_pc: float
    seed: int
    fix_sigma2: Optional[float] = None
    t2_draws: Optional[np.ndarray] = None     # latent scales t_j^2 at the kept draws

    @property
    def n_draws(self):
        return self.draws.shape[0]

    @property
    def tau_equivalent(self):
        """Laplacian rate of x | sigma2 at the chain's mean sigma2 (lambda_pc / sigma)."""
        return self.lambda_pc / float(np.sqrt(np.mean(self.sigma2_draws)))


def sample_x_conditional(y, phi, inv_t2, sigma2, rng, gram=None, phity=None):
    """x ~ N(A^{-1} Phi^T y, sigma2 A^{-1}) with A = Phi^T Phi + diag(inv_t2)."""
    gram = phi.T @ phi if gram is None else gram
    phity = phi.T @ y if phity is None else phity
    A = gram + np.diag(inv_t2)
    try:
        L = linalg.cholesky(A, lower=True)
    except linalg.LinAlgError as exc:
        raise NumericalError("x-conditional precision matrix is not positive definite") from exc
    mean = linalg.cho_solve((L, True), phity)
    z = rng.standard_normal(A.shape[0])
    return mean + np.sqrt(sigma2) * linalg.solve_triangular(L, z, lower=True, trans='T')


def sample_sigma2_conditional(y, phi, x, inv_t2, rng):
    """Inverse-gamma draw: shape (n-1)/2 + d/2, scale (||y - Phi x||^2 + sum x_j^2 / t_j^2) / 2."""
    n, d = phi.shape
    resid = y - phi @ x
    shape = 0.5 * (n - 1) + 0.5 * d
    scale = 0.5 * float(resid @ resid) + 0.5 * float((x ** 2 * inv_t2).sum())
    if scale <= 0 or shape <= 0:
        raise DegenerateInputError(f"sigma2 conditional has shape {shape} and scale {scale}")
    return scale / rng.gamma(shape)


def sample_invt2_conditional(x, sigma2, lambda_pc, rng):
    """1/t_j^2 ~ InverseGaussian(mean sqrt(lambda^2 sigma2 / x_j^2), shape lambda^2).

    A coordinate sitting exactly at zero falls back to a prior draw of t_j^2.
    """
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    shape = lambda_pc ** 2
    nonzero = x != 0.0
    if nonzero.any():
        mean = np.sqrt(shape * sigma2) / np.abs(x[nonzero])
        out[nonzero] = rng.wald(mean, shape)
    if (~nonzero).any():
        out[~nonzero] = 1.0 / rng.exponential(2.0 / shape, size=int((~nonzero).sum()))
    return out


def run_gibbs(y, phi, lambda_pc, iters=DEFAULT_GIBBS_ITERS, burn_in=DEFAULT_GIBBS_BURN_IN, seed=DEFAULT_SEED,
              thin=DEFAULT_GIBBS_THIN, fix_sigma2=None):
    """Cycle the three conditionals; keep `iters` draws after `burn_in`.

    With fix_sigma2 set, sigma^2 is held at that value, which gives the
    fixed-parameter Gauss-scale-mixture sampler: x then has a Laplacian prior
    with rate lambda_pc / sqrt(fix_sigma2).
    """
    phi = as_matrix("phi", phi)
    y = as_vector("y", y, dim=phi.shape[0])
    require_positive("lambda_pc", lambda_pc)
    iters = require_count("iters", iters)
    thin = require_count("thin", thin)
    burn_in = require_count("burn_in", burn_in, minimum=0)
    if fix_sigma2 is not None:
        require_positive("fix_sigma2", fix_sigma2)

    n, d = phi.shape
    rng = make_rng(seed)
    gram = phi.T @ phi
    phity = phi.T @ y
    x0 = np.linalg.lstsq(gram + 1e-8 * np.eye(d), phity, rcond=None)[0]
    resid = y - phi @ x0
    sigma2_0 = fix_sigma2 if fix_sigma2 is not None else max(float(resid @ resid) / max(n - 1, 1), 1e-6)
    state = GibbsState(x=x0, inv_t2=np.ones(d), sigma2=sigma2_0, rng=rng)

    draws = np.empty((iters, d))
    sigma2_draws = np.empty(iters)
    t2_draws = np.empty((iters, d))
    kept = 0
    total = burn_in + iters * thin
    for it in range(total):
        state.x = sample_x_conditional(y, phi, state.inv_t2, state.sigma2, rng, gram=gram, phity=phity)
        if fix_sigma2 is None:
            state.sigma2 = sample_sigma2_conditional(y, phi, state.x, state.inv_t2, rng)
        state.inv_t2 = sample_invt2_conditional(state.x, state.sigma2, lambda_pc, rng)
        if it >= burn_in and (it - burn_in) % thin == 0:
            draws[kept] = state.x
            sigma2_draws[kept] = state.sigma2
            t2_draws[kept] = 1.0 / state.inv_t2
            kept += 1
        if (it + 1) % 1000 == 0:
            logger.debug("gibbs iteration %d/%d", it + 1, total)

    if not np.all(np.isfinite(draws)):
        raise NumericalError("Gibbs chain produced non-finite draws")
    return GibbsChain(draws=draws, sigma2_draws=sigma2_draws, burn_in=burn_in, thin=thin,
                      lambda_pc=float(lambda_pc), seed=seed, fix_sigma2=fix_sigma2, t2_draws=t2_draws)
