"""
Maximum-likelihood lambda by EM, with transport-map samples in the E-step.

Under the fixed-parameter model the complete-data log likelihood depends on
tau only through d log tau - tau ||x||_1, so the M-step is d / E||X||_1.
The Gibbs variant updates lambda_pc from the latent scales t^2 instead.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from config import (
    DEFAULT_EM_MAX_ITER, DEFAULT_EM_REL_TOL, DEFAULT_GIBBS_BURN_IN, DEFAULT_GIBBS_ITERS, DEFAULT_N_TRAIN, DEFAULT_SEED,
)
from .base import DegenerateInputError, InvalidArgumentError, as_matrix, require_count, require_positive, spawn_seeds
from .gibbs_baseline import run_gibbs
from .prior_pce import LaplacianPrior, sample_laplacian
from .transport_admm import run_admm

logger = logging.getLogger(__name__)


@dataclass
class EmConfig:
    lambda_init: float = 1.0
    n_samples: int = DEFAULT_N_TRAIN
    rel_tol: float = DEFAULT_EM_REL_TOL
    max_iter: int = DEFAULT_EM_MAX_ITER
    seed: int = DEFAULT_SEED
    warm_start: bool = True
    damping: bool = False        # average the last two iterates

    def __post_init__(self):
        require_positive("lambda_init", self.lambda_init)
        require_count("n_samples", self.n_samples)
        require_count("max_iter", self.max_iter)
        if not self.rel_tol > 0:
            raise InvalidArgumentError(f"rel_tol must be positive, got {self.rel_tol}")


@dataclass
class EmTrace:
    lambdas: list = field(default_factory=list)
    mean_l1: list = field(default_factory=list)
    converged: bool = False
    admm_converged: list = field(default_factory=list)

    @property
    def final_lambda(self):
        return self.lambdas[-1]

    def records(self):
        """One dict per completed iteration, for serialization."""
        return [
            {"iteration": k + 1, "lambda": self.lambdas[k], "next_lambda": self.lambdas[k + 1],
             "mean_l1": self.mean_l1[k], "admm_converged": self.admm_converged[k]}
            for k in range(len(self.mean_l1))
        ]


def m_step(d, posterior_samples):
    """d / mean ||Z_i||_1 -- the rate maximizing the expected Laplacian log prior."""
    Z = as_matrix("posterior_samples", posterior_samples)
    if Z.shape[1] != d:
        raise InvalidArgumentError(f"samples have {Z.shape[1]} columns, expected {d}")
    mean_l1 = float(np.abs(Z).sum(axis=1).mean())
    if mean_l1 == 0.0:
        raise DegenerateInputError("all posterior samples are zero")
    return d / mean_l1


def run_em(g_template, basis, admm_cfg, em_cfg, callback: Optional[Callable[[dict], None]] = None):
    """Alternate transport-map E-steps and closed-form M-steps on lambda.

    g_template supplies Phi, y and sigma2; its lambda is replaced every
    iteration. Prior draws are re-drawn each iteration from p(x; tau_k) with a
    per-iteration sub-seed. The M-step estimates the prior rate, mapped back
    with lambda = 2 tau sigma2 (identical under sigma2 = 1/2).
    """
    d = g_template.dim
    seeds = spawn_seeds(em_cfg.seed, em_cfg.max_iter)
    trace = EmTrace(lambdas=[float(em_cfg.lambda_init)])
    previous_map = None

    for k in range(em_cfg.max_iter):
        lam = trace.lambdas[-1]
        g = g_template.with_lambda(lam)
        basis_k = basis.with_rate(g.tau)
        train = sample_laplacian(LaplacianPrior(d, g.tau), em_cfg.n_samples, seeds[k])
        init = previous_map if em_cfg.warm_start else None
        tmap = run_admm(g, train, basis_k, admm_cfg, init_map=init)
        if not tmap.converged:
            logger.warning("EM iteration %d: transport fit did not converge", k + 1)
        pushed = tmap.apply_batch(train.samples)
        tau_hat = m_step(d, pushed)
        new_lam = 2.0 * g.sigma2 * tau_hat
        if em_cfg.damping:
            new_lam = 0.5 * (new_lam + lam)
        if not math.isfinite(new_lam) or new_lam <= 0:
            raise DegenerateInputError(f"EM produced an invalid lambda {new_lam}")

        trace.mean_l1.append(d / tau_hat)
        trace.admm_converged.append(tmap.converged)
        trace.lambdas.append(new_lam)
        previous_map = tmap
        logger.info("EM iteration %d: lambda %.6g -> %.6g", k + 1, lam, new_lam)
        if callback is not None:
            callback(trace.records()[-1])

        if abs(new_lam - lam) / lam < em_cfg.rel_tol:
            trace.converged = True
            break
    return trace


# ============================================================================
#  MONTE CARLO EM ON GIBBS CHAINS
# ============================================================================

@dataclass
class GibbsEmTrace:
    lambdas: list = field(default_factory=list)    # lambda_pc iterates
    mean_t2: list = field(default_factory=list)    # sum_j E[t_j^2] per E-step
    converged: bool = False

    @property
    def final_lambda(self):
        return self.lambdas[-1]

    def records(self):
        return [
            {"iteration": k + 1, "lambda_pc": self.lambdas[k], "next_lambda_pc": self.lambdas[k + 1],
             "sum_mean_t2": self.mean_t2[k]}
            for k in range(len(self.mean_t2))
        ]


def gibbs_m_step(t2_draws):
    """sqrt(2 d / sum_j E[t_j^2]), the penalty maximizing the expected Exp(lambda^2/2) log prior of t^2."""
    T = as_matrix("t2_draws", t2_draws)
    total = float(T.mean(axis=0).sum())
    if not total > 0 or not math.isfinite(total):
        raise DegenerateInputError(f"latent scales have mean sum {total}")
    return math.sqrt(2.0 * T.shape[1] / total)


def run_gibbs_em(y, phi, em_cfg, iters=DEFAULT_GIBBS_ITERS, burn_in=DEFAULT_GIBBS_BURN_IN, fix_sigma2=None,
                 callback: Optional[Callable[[dict], None]] = None):
    """Monte Carlo EM for the Gibbs penalty lambda_pc.

    em_cfg.lambda_init is read as a lambda_pc. Each E-step is a fresh chain at
    the current penalty with its own sub-seed; the M-step only needs the
    latent t^2 draws, so it is the same with sigma^2 sampled or fixed.
    """
    seeds = spawn_seeds(em_cfg.seed, em_cfg.max_iter)
    trace = GibbsEmTrace(lambdas=[float(em_cfg.lambda_init)])
    for k in range(em_cfg.max_iter):
        lam = trace.lambdas[-1]
        chain = run_gibbs(y, phi, lam, iters=iters, burn_in=burn_in, seed=seeds[k], fix_sigma2=fix_sigma2)
        new_lam = gibbs_m_step(chain.t2_draws)
        if em_cfg.damping:
            new_lam = 0.5 * (new_lam + lam)
        trace.mean_t2.append(float(chain.t2_draws.mean(axis=0).sum()))
        trace.lambdas.append(new_lam)
        logger.info("Gibbs EM iteration %d: lambda_pc %.6g -> %.6g", k + 1, lam, new_lam)
        if callback is not None:
            callback(trace.records()[-1])
        if abs(new_lam - lam) / lam < em_cfg.rel_tol:
            trace.converged = True
            break
    return trace
