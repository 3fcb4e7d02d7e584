"""
Posterior summaries, density estimates and lambda-sweep regression paths.
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import integrate, stats

from config import (
    DEFAULT_CV_FOLDS, DEFAULT_GIBBS_BURN_IN, DEFAULT_GIBBS_ITERS, DEFAULT_LEVEL, DEFAULT_N_SAMPLES,
    DEFAULT_N_TRAIN, DEFAULT_ORDER, DEFAULT_SEED, DEFAULT_SIGMA2,
)
from .base import (
    DegenerateInputError, InvalidArgumentError, TransportLassoError, as_matrix, as_vector, require_count,
    spawn_seeds,
)
from .gibbs_baseline import run_gibbs
from .lasso_solvers import LassoProblem, coordinate_descent_lasso, solve_lasso
from .prior_pce import LaplacianPrior, build_multi_index_set, sample_laplacian
from .transport_admm import AdmmConfig, LassoObjectiveG, run_admm

logger = logging.getLogger(__name__)

SAMPLERS = ("transport", "gibbs", "lasso-point")

# errors that fail one grid point without stopping the sweep
SWEEP_ERRORS = (TransportLassoError, np.linalg.LinAlgError, ValueError, ArithmeticError)


@dataclass
class PosteriorSummary:
    medians: np.ndarray
    ci_low: np.ndarray
    ci_high: np.ndarray
    n_samples: int
    lam: float
    level: float = DEFAULT_LEVEL
    label: str = ""

    @property
    def widths(self):
        return self.ci_high - self.ci_low


@dataclass
class PathResult:
    lambda_grid: np.ndarray
    medians_by_lambda: np.ndarray
    sampler: str
    ci_low: Optional[np.ndarray] = None
    ci_high: Optional[np.ndarray] = None
    optimal_lambda: Optional[float] = None
    method: Optional[str] = None             # "cv", "em" or "gibbs-em"
    lambda_pc_grid: Optional[np.ndarray] = None
    failures: dict = field(default_factory=dict)


@dataclass
class SweepConfig:
    admm: AdmmConfig = field(default_factory=AdmmConfig)
    order: int = DEFAULT_ORDER
    n_train: int = DEFAULT_N_TRAIN
    n_samples: int = DEFAULT_N_SAMPLES
    sigma2: float = DEFAULT_SIGMA2
    seed: int = DEFAULT_SEED
    gibbs_iters: int = DEFAULT_GIBBS_ITERS
    gibbs_burn_in: int = DEFAULT_GIBBS_BURN_IN
    gibbs_fix_sigma2: bool = True
    level: float = DEFAULT_LEVEL
    warm_start: bool = True
    workers: int = 1
    solver: str = "cd"


# ============================================================================
#  SAMPLE SUMMARIES
# ============================================================================

def push_samples(tmap, n, seed):
    """Fresh prior draws at the map's training rate, pushed through the map."""
    batch = sample_laplacian(LaplacianPrior(tmap.dim, tmap.tau), n, seed)
    return tmap.apply_batch(batch.samples)


def componentwise_median(samples):
    """Per-coordinate median, the minimizer of E||x - m||_1."""
    S = as_matrix("samples", samples)
    return np.median(S, axis=0)


def credible_intervals(samples, level=DEFAULT_LEVEL):
    """Equal-tailed empirical interval per coordinate."""
    if not 0 < level < 1:
        raise InvalidArgumentError(f"level must lie in (0, 1), got {level}")
    S = as_matrix("samples", samples)
    tail = 0.5 * (1.0 - level)
    low, high = np.quantile(S, [tail, 1.0 - tail], axis=0)
    return low, high


def summarize(samples, lam, level=DEFAULT_LEVEL, label=""):
    S = as_matrix("samples", samples)
    low, high = credible_intervals(S, level)
    return PosteriorSummary(medians=componentwise_median(S), ci_low=low, ci_high=high,
                            n_samples=S.shape[0], lam=float(lam), level=level, label=label)


def kde(samples, grid):
    """Gaussian kernel density with Silverman bandwidth 1.06 * sd * N^(-1/5)."""
    x = as_vector("samples", samples)
    if x.size < 2:
        raise InvalidArgumentError("kde needs at least two samples")
    if np.std(x) == 0.0:
        raise DegenerateInputError("kde of samples with zero variance")
    estimator = stats.gaussian_kde(x, bw_method=1.06 * x.size ** (-0.2))
    return estimator(np.asarray(grid, dtype=float))


def ks_distance(samples, cdf):
    return float(stats.kstest(np.asarray(samples, dtype=float), cdf).statistic)


def ks_two_sample(a, b):
    return float(stats.ks_2samp(np.asarray(a, dtype=float), np.asarray(b, dtype=float)).statistic)


def quadrature_posterior_cdf(g, grid):
    """Normalized CDF of exp(-g) on a 1-d grid (d = 1 problems only).

    Returns a callable usable as a KS reference.
    """
    if g.dim != 1:
        raise InvalidArgumentError("quadrature reference is only available for d = 1")
    grid = np.sort(np.asarray(grid, dtype=float))
    logq = -g.value_batch(grid[:, None])
    dens = np.exp(logq - logq.max())
    cdf = integrate.cumulative_trapezoid(dens, grid, initial=0.0)
    cdf /= cdf[-1]

    def cdf_fn(x):
        return np.interp(x, grid, cdf, left=0.0, right=1.0)

    return cdf_fn


# ============================================================================
#  LAMBDA SELECTION
# ============================================================================

def cross_validate_lambda(phi, y, lambda_grid, folds=DEFAULT_CV_FOLDS, seed=DEFAULT_SEED):
    """K-fold CV of the point Lasso; returns (best lambda, mean CV error per lambda)."""
    phi = as_matrix("phi", phi)
    y = as_vector("y", y, dim=phi.shape[0])
    folds = min(require_count("folds", folds, minimum=2), phi.shape[0])
    grid = _check_grid(lambda_grid)
    order = np.random.default_rng(seed).permutation(phi.shape[0])
    splits = np.array_split(order, folds)
    errors = np.zeros(grid.size)
    for test_idx in splits:
        train_idx = np.setdiff1d(order, test_idx)
        warm = None
        for k, lam in enumerate(grid[::-1]):
            sol = coordinate_descent_lasso(LassoProblem(phi[train_idx], y[train_idx], lam), warm_start=warm)
            warm = sol.coef
            resid = y[test_idx] - phi[test_idx] @ sol.coef
            errors[grid.size - 1 - k] += float(resid @ resid)
    errors /= phi.shape[0]
    return float(grid[int(np.argmin(errors))]), errors


def _check_grid(lambda_grid):
    grid = np.asarray(lambda_grid, dtype=float).ravel()
    if grid.size == 0:
        raise InvalidArgumentError("lambda grid is empty")
    if np.any(grid <= 0) or np.any(np.diff(grid) <= 0):
        raise InvalidArgumentError("lambda grid must be positive and strictly increasing")
    return grid


# ============================================================================
#  PATHS
# ============================================================================

def gibbs_lambda_pc(lam, sigma2):
    """Park-Casella penalty whose x | sigma2 prior has rate tau = lam / (2 sigma2)."""
    return lam / (2.0 * sigma2) * np.sqrt(sigma2)


def lambda_from_pc(lambda_pc, sigma2):
    """Inverse of gibbs_lambda_pc: lam = 2 sigma2 * lambda_pc / sqrt(sigma2)."""
    return 2.0 * np.sqrt(sigma2) * lambda_pc


def _fit_transport(g, cfg, seed, init_map=None):
    basis = build_multi_index_set(g.dim, cfg.order, rate=g.tau)
    train_seed, push_seed = spawn_seeds(seed, 2)
    train = sample_laplacian(LaplacianPrior(g.dim, g.tau), cfg.n_train, train_seed)
    tmap = run_admm(g, train, basis, cfg.admm, init_map=init_map)
    return tmap, push_samples(tmap, cfg.n_samples, push_seed)


def _gibbs_samples(g, cfg, seed):
    chain = run_gibbs(g.y, g.phi, gibbs_lambda_pc(g.lam, g.sigma2), iters=cfg.gibbs_iters,
                      burn_in=cfg.gibbs_burn_in, seed=seed,
                      fix_sigma2=g.sigma2 if cfg.gibbs_fix_sigma2 else None)
    return chain.draws


def lambda_sweep_path(problem, lambda_grid, sampler, cfg=None):
    """Medians (or point estimates) across a lambda grid.

    `problem` is a LassoObjectiveG whose lambda is replaced per grid point.
    Transport maps are warm-started from the previous (smaller) lambda when
    cfg.warm_start is set; otherwise grid points run as independent jobs.
    A failing grid point leaves a NaN row and an entry in `failures`.
    """
    if sampler not in SAMPLERS:
        raise InvalidArgumentError(f"Unknown sampler: {sampler}")
    cfg = cfg or SweepConfig()
    grid = _check_grid(lambda_grid)
    d = problem.dim
    medians = np.full((grid.size, d), np.nan)
    lows = np.full((grid.size, d), np.nan)
    highs = np.full((grid.size, d), np.nan)
    failures = {}
    seeds = spawn_seeds(cfg.seed, grid.size)

    def job(k, init_map=None):
        g = problem.with_lambda(grid[k])
        if sampler == "lasso-point":
            coef = solve_lasso(LassoProblem(g.phi, g.y, g.lam), solver=cfg.solver).coef
            return None, coef[None, :]
        if sampler == "transport":
            return _fit_transport(g, cfg, seeds[k], init_map)
        return None, _gibbs_samples(g, cfg, seeds[k])

    def record(k, samples):
        medians[k] = componentwise_median(samples)
        if samples.shape[0] > 1:
            lows[k], highs[k] = credible_intervals(samples, cfg.level)

    if cfg.warm_start and sampler == "transport":
        previous = None
        for k in range(grid.size):
            try:
                previous, samples = job(k, previous)
                record(k, samples)
            except SWEEP_ERRORS as exc:
                failures[float(grid[k])] = str(exc)
                logger.warning("path point lambda=%g failed: %s", grid[k], exc)
    else:
        with ThreadPoolExecutor(max_workers=max(1, cfg.workers)) as pool:
            futures = {k: pool.submit(job, k) for k in range(grid.size)}
            for k, fut in futures.items():
                try:
                    _, samples = fut.result()
                    record(k, samples)
                except SWEEP_ERRORS as exc:
                    failures[float(grid[k])] = str(exc)
                    logger.warning("path point lambda=%g failed: %s", grid[k], exc)

    lambda_pc = gibbs_lambda_pc(grid, problem.sigma2) if sampler == "gibbs" else None
    return PathResult(lambda_grid=grid, medians_by_lambda=medians, sampler=sampler,
                      ci_low=lows if sampler != "lasso-point" else None,
                      ci_high=highs if sampler != "lasso-point" else None,
                      lambda_pc_grid=lambda_pc, failures=failures)


# ============================================================================
#  SAMPLER COMPARISON
# ============================================================================

@dataclass
class CompareResult:
    """Transport against both Gibbs variants at one lambda.

    gibbs_fixed holds sigma^2 at the transport value and targets the same
    posterior; gibbs_sigma2 samples sigma^2 under its scale-invariant prior.
    """
    transport: PosteriorSummary
    gibbs_fixed: PosteriorSummary
    gibbs_sigma2: PosteriorSummary
    lasso_point: np.ndarray
    lambda_pc: float
    gibbs_sd: np.ndarray                  # sd of the fixed-sigma^2 chain
    kde_grids: np.ndarray                 # (d, G)
    kde_transport: np.ndarray             # (d, G)
    kde_gibbs_fixed: np.ndarray           # (d, G)
    kde_gibbs_sigma2: np.ndarray          # (d, G)
    transport_converged: bool
    ks_between: np.ndarray                # two-sample KS, transport vs fixed-sigma^2 chain
    ks_to_quadrature: Optional[dict] = None   # d = 1 only

    @property
    def median_gap_in_sd(self):
        return np.abs(self.transport.medians - self.gibbs_fixed.medians) / self.gibbs_sd

    @property
    def narrower_count(self):
        """Coordinates whose transport interval is no wider than the sampled-sigma^2 chain's."""
        return int(np.sum(self.transport.widths <= self.gibbs_sigma2.widths))


def compare_samplers(problem, cfg=None, grid_points=200):
    """Transport vs both Gibbs chains at one lambda: medians, CIs and per-coordinate KDEs."""
    cfg = cfg or SweepConfig()
    transport_seed, fixed_seed, sigma2_seed = spawn_seeds(cfg.seed, 3)
    tmap, t_samples = _fit_transport(problem, cfg, transport_seed)
    fixed = _gibbs_samples(problem, replace(cfg, gibbs_fix_sigma2=True), fixed_seed)
    sampled = _gibbs_samples(problem, replace(cfg, gibbs_fix_sigma2=False), sigma2_seed)
    point = solve_lasso(LassoProblem(problem.phi, problem.y, problem.lam), solver=cfg.solver).coef

    d = problem.dim
    grids = np.empty((d, grid_points))
    densities = {name: np.empty((d, grid_points)) for name in ("transport", "fixed", "sampled")}
    for j in range(d):
        columns = {"transport": t_samples[:, j], "fixed": fixed[:, j], "sampled": sampled[:, j]}
        lo = min(c.min() for c in columns.values())
        hi = max(c.max() for c in columns.values())
        pad = 0.1 * (hi - lo)
        grids[j] = np.linspace(lo - pad, hi + pad, grid_points)
        for name, column in columns.items():
            densities[name][j] = kde(column, grids[j])

    quadrature_ks = None
    if d == 1:
        lo, hi = grids[0, 0], grids[0, -1]
        cdf = quadrature_posterior_cdf(problem, np.linspace(lo - (hi - lo), hi + (hi - lo), 100001))
        quadrature_ks = {"transport": ks_distance(t_samples[:, 0], cdf), "gibbs": ks_distance(fixed[:, 0], cdf)}

    return CompareResult(
        transport=summarize(t_samples, problem.lam, cfg.level, "transport"),
        gibbs_fixed=summarize(fixed, problem.lam, cfg.level, "gibbs-fixed-sigma2"),
        gibbs_sigma2=summarize(sampled, problem.lam, cfg.level, "gibbs-sampled-sigma2"),
        lasso_point=point,
        lambda_pc=float(gibbs_lambda_pc(problem.lam, problem.sigma2)),
        gibbs_sd=np.std(fixed, axis=0, ddof=1),
        kde_grids=grids, kde_transport=densities["transport"],
        kde_gibbs_fixed=densities["fixed"], kde_gibbs_sigma2=densities["sampled"],
        transport_converged=tmap.converged,
        ks_between=np.array([ks_two_sample(t_samples[:, j], fixed[:, j]) for j in range(d)]),
        ks_to_quadrature=quadrature_ks,
    )


def with_optimal_lambda(path, value, method):
    return replace(path, optimal_lambda=float(value), method=method)
