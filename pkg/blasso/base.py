import os
import json
import math
from datetime import datetime

import numpy as np


# ============================================================================
#  ERRORS
# ============================================================================

class TransportLassoError(Exception):
    """Root of every error raised by the library."""
    kind = "error"


class InvalidArgumentError(TransportLassoError, ValueError):
    kind = "invalid-argument"


class NumericalError(TransportLassoError, ArithmeticError):
    kind = "numerical-error"


class DegenerateInputError(TransportLassoError, ValueError):
    kind = "degenerate-input"


class DatasetError(TransportLassoError, ValueError):
    kind = "dataset-error"


# ============================================================================
#  VALIDATION HELPERS
# ============================================================================

def require_positive(name, value):
    if value is None or not math.isfinite(value) or value <= 0:
        raise InvalidArgumentError(f"{name} must be a positive finite number, got {value}")
    return value


def require_count(name, value, minimum=1):
    if value is None or int(value) != value or value < minimum:
        raise InvalidArgumentError(f"{name} must be an integer >= {minimum}, got {value}")
    return int(value)


def as_vector(name, x, dim=None):
    """Coerce to a 1-D float array, checking length and finiteness."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim != 1:
        raise InvalidArgumentError(f"{name} must be a vector, got shape {arr.shape}")
    if dim is not None and arr.shape[0] != dim:
        raise InvalidArgumentError(f"{name} has length {arr.shape[0]}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


def as_matrix(name, x, cols=None):
    """Coerce to a 2-D float array (a vector becomes one row)."""
    arr = np.asarray(x, dtype=float)
    if arr.ndim == 1:
        arr = arr.reshape(1, -1)
    if arr.ndim != 2:
        raise InvalidArgumentError(f"{name} must be a matrix, got shape {arr.shape}")
    if cols is not None and arr.shape[1] != cols:
        raise InvalidArgumentError(f"{name} has {arr.shape[1]} columns, expected {cols}")
    if not np.all(np.isfinite(arr)):
        raise InvalidArgumentError(f"{name} has non-finite entries")
    return arr


def check_finite(name, arr):
    if not np.all(np.isfinite(arr)):
        raise NumericalError(f"non-finite values in {name}")
    return arr


# ============================================================================
#  RANDOM STREAMS
# ============================================================================

def make_rng(seed):
    return np.random.default_rng(seed)


def spawn_seeds(seed, count):
    """Independent integer sub-seeds, reproducible from one parent seed."""
    children = np.random.SeedSequence(seed).spawn(count)
    return [int(c.generate_state(1)[0]) for c in children]


# ============================================================================
#  OUTPUT LOCATIONS
# ============================================================================

def ensure_output_dir(path):
    """Create the output directory if needed and return it"""
    os.makedirs(path, exist_ok=True)
    return path


def write_diagnostic_dump(out_dir, error, config=None):
    """Dump an exception and the run configuration for post-mortem inspection"""
    ensure_output_dir(out_dir)
    full_path = os.path.join(out_dir, "diagnostic.json")
    payload = {
        "error_type": type(error).__name__,
        "kind": getattr(error, "kind", "error"),
        "message": str(error),
        "config": config or {},
        "timestamp": datetime.now().isoformat(),
    }
    with open(full_path, 'w', encoding='utf-8') as f:
        json.dump(payload, f, indent=2, ensure_ascii=False, sort_keys=True, default=str)
    return full_path
