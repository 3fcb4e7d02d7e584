"""
Laplacian prior sampling and the sign-augmented Laguerre chaos basis.

Each coordinate factor is either L_n(tau*|x|) (even) or sign(x)*L_n(tau*|x|)
(odd). Both families are orthonormal under the Laplacian(tau) density, and the
odd factors are what let a truncated expansion represent monotone maps.
"""
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .base import (
    InvalidArgumentError, as_matrix, as_vector, make_rng, require_count, require_positive,
)

EVEN, ODD = 0, 1


# ============================================================================
#  PRIOR
# ============================================================================

@dataclass(frozen=True)
class LaplacianPrior:
    dim: int
    rate: float = 1.0

    def __post_init__(self):
        require_count("dim", self.dim)
        require_positive("rate", self.rate)

    @property
    def variance(self):
        return 2.0 / self.rate ** 2

    def log_density(self, x):
        """log p(x; tau) for one point or a batch of rows."""
        arr = np.asarray(x, dtype=float)
        l1 = np.abs(arr).sum(axis=-1)
        return self.dim * np.log(self.rate / 2.0) - self.rate * l1


@dataclass(frozen=True)
class SampleBatch:
    samples: np.ndarray
    seed: int
    rate: float

    @property
    def n(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]


def sample_laplacian(prior, n, seed):
    """Draw n i.i.d. Laplacian(tau) vectors by inverse CDF.

    One uniform per coordinate: its top half-bit picks the sign and the rest
    is mapped through the exponential quantile -log(1 - u) / tau.
    """
    if not isinstance(n, (int, np.integer)) or n < 1:
        raise InvalidArgumentError(f"n must be a positive integer, got {n}")
    require_positive("rate", prior.rate)
    rng = make_rng(seed)
    u = 2.0 * rng.random((int(n), prior.dim))
    upper = u >= 1.0
    frac = np.where(upper, u - 1.0, u)
    magnitude = -np.log1p(-frac) / prior.rate
    samples = np.where(upper, magnitude, -magnitude)
    return SampleBatch(samples=samples, seed=seed, rate=float(prior.rate))


# ============================================================================
#  LAGUERRE POLYNOMIALS
# ============================================================================

def _check_nonneg(t):
    arr = np.asarray(t, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise InvalidArgumentError("Laguerre argument must be finite and non-negative")
    return arr


def laguerre_table(max_degree, t):
    """L_0..L_max_degree at t; result has shape t.shape + (max_degree + 1,)."""
    t = np.asarray(t, dtype=float)
    out = np.empty(t.shape + (max_degree + 1,))
    out[..., 0] = 1.0
    if max_degree >= 1:
        out[..., 1] = 1.0 - t
    for k in range(1, max_degree):
        out[..., k + 1] = ((2 * k + 1 - t) * out[..., k] - k * out[..., k - 1]) / (k + 1)
    return out


def laguerre_deriv_table(max_degree, t, values=None):
    """dL_n/dt for n = 0..max_degree, same layout as laguerre_table.

    Uses n(L_n - L_{n-1})/t away from zero; near zero the exact identity
    L_n' = -(L_0 + ... + L_{n-1}) takes over (it gives -n at t = 0).
    """
    t = np.asarray(t, dtype=float)
    if values is None:
        values = laguerre_table(max_degree, t)
    out = np.zeros_like(values)
    if max_degree == 0:
        return out
    partial = -np.cumsum(values[..., :-1], axis=-1)
    small = t < 1e-6
    safe_t = np.where(small, 1.0, t)[..., None]
    n = np.arange(1, max_degree + 1)
    ratio = n * (values[..., 1:] - values[..., :-1]) / safe_t
    out[..., 1:] = np.where(small[..., None], partial, ratio)
    return out


def laguerre_eval(n, t):
    """Standard Laguerre polynomial L_n(t) (orthonormal under e^{-t} on [0, inf))."""
    require_count("degree", n, minimum=0)
    arr = _check_nonneg(t)
    return laguerre_table(int(n), arr)[..., int(n)][()]


def laguerre_deriv(n, t):
    require_count("degree", n, minimum=0)
    arr = _check_nonneg(t)
    return laguerre_deriv_table(int(n), arr)[..., int(n)][()]


# ============================================================================
#  MULTI-INDEX SET
# ============================================================================

@dataclass(frozen=True)
class MultiIndex:
    degrees: tuple
    parities: tuple

    def __post_init__(self):
        if len(self.degrees) != len(self.parities):
            raise InvalidArgumentError("degrees and parities must have the same length")
        if any(p not in (EVEN, ODD) for p in self.parities):
            raise InvalidArgumentError("parities must be 0 (even) or 1 (odd)")
        if any(d < 0 for d in self.degrees):
            raise InvalidArgumentError("degrees must be non-negative")

    @property
    def weights(self):
        return tuple(d + p for d, p in zip(self.degrees, self.parities))

    @property
    def total(self):
        return sum(self.weights)

    def sort_key(self):
        # graded first; within a grade, weight sits on earlier coordinates first,
        # and the odd (lower-degree) factor comes before the even one
        return (self.total, tuple(-w for w in self.weights), self.degrees)


def _weight_vectors(d, budget):
    """All length-d non-negative integer vectors with sum <= budget."""
    if d == 0:
        yield ()
        return
    for w in range(budget + 1):
        for rest in _weight_vectors(d - 1, budget - w):
            yield (w,) + rest


def _factor_choices(weight):
    # (degree, parity) pairs carrying this combined weight
    if weight == 0:
        return [(0, EVEN)]
    return [(weight - 1, ODD), (weight, EVEN)]


@dataclass(frozen=True)
class PceBasis:
    prior: LaplacianPrior
    order: int
    indices: tuple = field(repr=False)

    def __post_init__(self):
        require_count("order", self.order)
        if not self.indices:
            raise InvalidArgumentError("basis needs at least one index")
        first = self.indices[0]
        if any(first.degrees) or any(first.parities):
            raise InvalidArgumentError("first basis index must be the constant")
        if len(set(self.indices)) != len(self.indices):
            raise InvalidArgumentError("basis indices must be unique")
        for idx in self.indices:
            if len(idx.degrees) != self.prior.dim:
                raise InvalidArgumentError("index length does not match the prior dimension")
            if idx.total > self.order:
                raise InvalidArgumentError(f"index {idx} exceeds the total order {self.order}")

    @property
    def dim(self):
        return self.prior.dim

    @property
    def size(self):
        return len(self.indices)

    @cached_property
    def degree_array(self):
        return np.array([idx.degrees for idx in self.indices], dtype=int)

    @cached_property
    def parity_array(self):
        return np.array([idx.parities for idx in self.indices], dtype=bool)

    def with_rate(self, rate):
        """Same index set under a prior with another rate."""
        return PceBasis(LaplacianPrior(self.dim, rate), self.order, self.indices)

    def position(self, degrees, parities):
        return self.indices.index(MultiIndex(tuple(degrees), tuple(parities)))

    def identity_coefficients(self):
        """d x K coefficients with S(x) = x exactly (needs order >= 2).

        x_j = (sign(x_j) - sign(x_j) * L_1(tau |x_j|)) / tau
        """
        if self.order < 2:
            raise InvalidArgumentError("the identity map needs order >= 2")
        d = self.dim
        coeffs = np.zeros((d, self.size))
        for j in range(d):
            odd0 = [0] * d
            odd1 = [0] * d
            odd1[j] = 1
            par = [0] * d
            par[j] = ODD
            coeffs[j, self.position(odd0, par)] = 1.0 / self.prior.rate
            coeffs[j, self.position(odd1, par)] = -1.0 / self.prior.rate
        return coeffs

    def continuity_constraints(self):
        """0/1 rows C with B C^T = 0 exactly when S is continuous at every x_j = 0.

        An odd-in-j factor is +-1 at x_j = 0+/0- (L_n(0) = 1), so the jump of S
        across that hyperplane is twice the sum of the odd-in-j coefficients
        sharing one (degree, parity) pattern in the other coordinates. One row
        per such group; rows may be linearly dependent.
        """
        rows = []
        for j in range(self.dim):
            groups = {}
            for k, idx in enumerate(self.indices):
                if idx.parities[j] != ODD:
                    continue
                rest = (idx.degrees[:j] + idx.degrees[j + 1:], idx.parities[:j] + idx.parities[j + 1:])
                groups.setdefault(rest, []).append(k)
            for members in groups.values():
                row = np.zeros(self.size)
                row[members] = 1.0
                rows.append(row)
        if not rows:
            return np.zeros((0, self.size))
        return np.vstack(rows)

    # --- evaluation ---

    def _factors(self, X):
        """Per-(sample, index, coordinate) factor values and their x-derivatives."""
        tau = self.prior.rate
        t = tau * np.abs(X)
        s = np.sign(X)
        vals = laguerre_table(self.order, t)
        ders = laguerre_deriv_table(self.order, t, vals)
        coords = np.arange(self.dim)[None, :]
        L = vals[:, coords, self.degree_array]     # (N, K, d)
        dL = ders[:, coords, self.degree_array]
        odd = self.parity_array[None, :, :]
        s_b = s[:, None, :]
        factor = np.where(odd, s_b * L, L)
        factor_der = tau * np.where(odd, dL, s_b * dL)
        return factor, factor_der

    def evaluate_batch(self, X):
        """A(x) for each row of X; shape (N, K)."""
        X = as_matrix("x", X, cols=self.dim)
        factor, _ = self._factors(X)
        return np.prod(factor, axis=2)

    def jacobian_batch(self, X):
        """J(x) for each row of X; shape (N, K, d)."""
        X = as_matrix("x", X, cols=self.dim)
        factor, factor_der = self._factors(X)
        out = np.empty_like(factor)
        for j in range(self.dim):
            swapped = factor.copy()
            swapped[:, :, j] = factor_der[:, :, j]
            out[:, :, j] = np.prod(swapped, axis=2)
        return out

    def to_descriptor(self):
        return {
            "dim": self.dim,
            "rate": self.prior.rate,
            "order": self.order,
            "indices": [[list(i.degrees), list(i.parities)] for i in self.indices],
        }

    @classmethod
    def from_descriptor(cls, desc):
        indices = tuple(MultiIndex(tuple(int(v) for v in deg), tuple(int(v) for v in par))
                        for deg, par in desc["indices"])
        return cls(LaplacianPrior(int(desc["dim"]), float(desc["rate"])), int(desc["order"]), indices)


def build_multi_index_set(d, order, rate=1.0):
    """Total-order sign-augmented index set in graded lexicographic order."""
    require_count("d", d)
    require_count("order", order)
    indices = []
    for weights in _weight_vectors(d, order):
        choices = [_factor_choices(w) for w in weights]
        stack = [((), ())]
        for options in choices:
            stack = [(deg + (c[0],), par + (c[1],)) for deg, par in stack for c in options]
        indices.extend(MultiIndex(deg, par) for deg, par in stack)
    indices.sort(key=MultiIndex.sort_key)
    return PceBasis(LaplacianPrior(d, rate), order, tuple(indices))


def evaluate_basis(basis, x):
    """A(x) = [phi_1(x), ..., phi_K(x)] at a single point."""
    x = as_vector("x", x, dim=basis.dim)
    return basis.evaluate_batch(x[None, :])[0]


def evaluate_jacobian_table(basis, x):
    """J(x)[k, j] = d phi_k / d x_j at a single point."""
    x = as_vector("x", x, dim=basis.dim)
    return basis.jacobian_batch(x[None, :])[0]
