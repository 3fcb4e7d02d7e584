import os
import json
from dataclasses import dataclass, field, asdict, fields
from typing import Optional

from dotenv import load_dotenv

# --- Environment ---
# A local .env may set TRANSPORT_LASSO_THREADS and friends
load_dotenv()
THREADS_ENV_VAR = "TRANSPORT_LASSO_THREADS"

# --- Configuration Files ---
RUN_CONFIG_FILE = "run_config.json"
MAP_FORMAT_VERSION = 1

# --- ADMM Configuration ---
DEFAULT_RHO = 1.0
DEFAULT_MAX_ITER = 500
DEFAULT_TOL_B = 1e-4             # relative Frobenius change of B
DEFAULT_TOL_RES = 1e-3           # max primal residual over blocks
DEFAULT_INNER_TOL = 1e-10        # p-update Lasso coordinate change
DEFAULT_INNER_MAX_SWEEPS = 1000
DEFAULT_GIRLS_EPSILON = 1e-8

# --- Basis / Training Configuration ---
DEFAULT_ORDER = 3
DEFAULT_N_TRAIN = 500
DEFAULT_N_SAMPLES = 10000

# --- Model Configuration ---
DEFAULT_SIGMA2 = 0.5             # lambda == tau under this convention
DEFAULT_LAMBDA = 1.0
DEFAULT_SEED = 0
DEFAULT_LEVEL = 0.95

# --- EM Configuration ---
DEFAULT_EM_REL_TOL = 1e-3
DEFAULT_EM_MAX_ITER = 25

# --- Gibbs Configuration ---
DEFAULT_GIBBS_ITERS = 10000
DEFAULT_GIBBS_BURN_IN = 1000
DEFAULT_GIBBS_THIN = 1

# --- Output ---
FLOAT_FORMAT = "%.17g"
DEFAULT_OUT_DIR = "results"
DEFAULT_RESPONSE = "Y"
DEFAULT_CV_FOLDS = 10

# --- Run Presets ---
RUN_PRESETS = {
    "quick": {"order": 2, "n_train": 200, "n_samples": 2000, "gibbs_iters": 2000, "gibbs_burn_in": 200, "max_iter": 200},
    "full": {"order": 3, "n_train": 500, "n_samples": 10000, "gibbs_iters": 10000, "gibbs_burn_in": 1000, "max_iter": 500},
}


@dataclass
class RunConfig:
    """Every knob a CLI run can turn; defaults follow the constants above."""
    subcommand: str = "fit"
    data: Optional[str] = None
    response: str = DEFAULT_RESPONSE
    seed: int = DEFAULT_SEED
    rho: float = DEFAULT_RHO
    order: int = DEFAULT_ORDER
    n_train: int = DEFAULT_N_TRAIN
    n_samples: int = DEFAULT_N_SAMPLES
    lam: float = DEFAULT_LAMBDA
    lambda_grid: list = field(default_factory=list)
    sigma2: float = DEFAULT_SIGMA2
    tol: float = DEFAULT_TOL_B
    tol_res: float = DEFAULT_TOL_RES
    max_iter: int = DEFAULT_MAX_ITER
    workers: Optional[int] = None
    solver: str = "cd"
    init_mode: str = "identity"
    balance_residuals: bool = False
    em_rel_tol: float = DEFAULT_EM_REL_TOL
    em_max_iter: int = DEFAULT_EM_MAX_ITER
    gibbs_iters: int = DEFAULT_GIBBS_ITERS
    gibbs_burn_in: int = DEFAULT_GIBBS_BURN_IN
    gibbs_thin: int = DEFAULT_GIBBS_THIN
    fix_sigma2: bool = False
    level: float = DEFAULT_LEVEL
    map_path: Optional[str] = None
    out: str = DEFAULT_OUT_DIR
    format: str = "csv"
    bench_workers: list = field(default_factory=lambda: [1, 4])
    path_sampler: str = "transport"
    lambda_select: str = "cv"
    download_url: Optional[str] = None

    def validate(self):
        """Raise InvalidArgumentError for the first field that is out of range."""
        from blasso.base import InvalidArgumentError
        from blasso.definitions import get_command

        command = get_command(self.subcommand)
        if command is None:
            raise InvalidArgumentError(f"Unknown subcommand: {self.subcommand}")
        for name in ("rho", "sigma2", "tol", "tol_res", "em_rel_tol", "lam"):
            if not getattr(self, name) > 0:
                raise InvalidArgumentError(f"{name} must be positive, got {getattr(self, name)}")
        for name in ("order", "n_train", "n_samples", "max_iter", "em_max_iter", "gibbs_iters", "gibbs_thin"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be at least 1, got {getattr(self, name)}")
        if self.gibbs_burn_in < 0:
            raise InvalidArgumentError("gibbs_burn_in must be non-negative")
        if self.workers is not None and self.workers < 1:
            raise InvalidArgumentError("workers must be at least 1")
        if any(v <= 0 for v in self.lambda_grid):
            raise InvalidArgumentError("lambda_grid values must be positive")
        if not 0 < self.level < 1:
            raise InvalidArgumentError("level must lie in (0, 1)")
        if self.solver not in ("cd", "girls"):
            raise InvalidArgumentError(f"Unknown solver: {self.solver}")
        if self.format not in ("csv", "json"):
            raise InvalidArgumentError(f"Unknown format: {self.format}")
        if self.init_mode not in ("identity", "random"):
            raise InvalidArgumentError(f"Unknown init mode: {self.init_mode}")
        if self.path_sampler not in ("transport", "gibbs", "lasso-point"):
            raise InvalidArgumentError(f"Unknown sampler: {self.path_sampler}")
        if self.lambda_select not in ("cv", "em", "gibbs-em", "none"):
            raise InvalidArgumentError(f"Unknown lambda selection: {self.lambda_select}")
        if any(int(w) < 1 for w in self.bench_workers):
            raise InvalidArgumentError("bench worker counts must be at least 1")
        options = command["parameters"]["properties"]
        for name in command["parameters"]["required"]:
            if not getattr(self, name):
                raise InvalidArgumentError(f"{self.subcommand} needs {options[name]['flag']}")
        return self

    def to_dict(self):
        return asdict(self)


def load_run_config(path=RUN_CONFIG_FILE):
    """Load a JSON run configuration from file"""
    if path and os.path.exists(path):
        try:
            with open(path, 'r', encoding='utf-8') as f:
                return json.load(f)
        except (OSError, json.JSONDecodeError):
            return {}
    return {}


def save_run_config(config, path=RUN_CONFIG_FILE):
    """Save a run configuration to file"""
    data = config.to_dict() if isinstance(config, RunConfig) else config
    with open(path, 'w', encoding='utf-8') as f:
        json.dump(data, f, indent=2, ensure_ascii=False, sort_keys=True)


def get_run_params(preset):
    """Get training/sampling sizes for a preset name.

    Args:
        preset: "quick", "full", or None for the module defaults

    Returns:
        dict with keys: order, n_train, n_samples, gibbs_iters, gibbs_burn_in, max_iter
    """
    if preset in RUN_PRESETS:
        return dict(RUN_PRESETS[preset])
    return {
        "order": DEFAULT_ORDER,
        "n_train": DEFAULT_N_TRAIN,
        "n_samples": DEFAULT_N_SAMPLES,
        "gibbs_iters": DEFAULT_GIBBS_ITERS,
        "gibbs_burn_in": DEFAULT_GIBBS_BURN_IN,
        "max_iter": DEFAULT_MAX_ITER,
    }


def build_run_config(cli_values, file_values=None, preset=None):
    """Merge defaults < preset < config file < explicit CLI values into a RunConfig."""
    known = {f.name for f in fields(RunConfig)}
    merged = {}
    if preset:
        merged.update(get_run_params(preset))
    for source in (file_values or {}, cli_values):
        for key, value in source.items():
            if key in known and value is not None:
                merged[key] = value
    return RunConfig(**merged)


def resolve_workers(workers=None):
    """Workers from the flag, else the environment, else 1."""
    if workers:
        return int(workers)
    env_value = os.environ.get(THREADS_ENV_VAR, "").strip()
    if env_value:
        try:
            return max(1, int(env_value))
        except ValueError:
            return 1
    return 1
