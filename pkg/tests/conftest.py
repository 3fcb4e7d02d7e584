from pathlib import Path

import numpy as np
import pytest

from blasso.transport_admm import LassoObjectiveG

DATA_DIR = Path(__file__).resolve().parent.parent / "data"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def diabetes_csv():
    return str(DATA_DIR / "synthetic_diabetes.csv")


@pytest.fixture
def small_regression(rng):
    """n=30, d=4 design with a sparse truth."""
    phi = rng.standard_normal((30, 4))
    truth = np.array([1.5, 0.0, -0.7, 0.0])
    y = phi @ truth + 0.3 * rng.standard_normal(30)
    return phi, y


@pytest.fixture
def one_d_problem():
    """d=1, n=20 synthetic regression at lambda=1."""
    gen = np.random.default_rng(7)
    phi = gen.standard_normal((20, 1)) / np.sqrt(20)
    y = 0.8 * phi[:, 0] + 0.4 * gen.standard_normal(20)
    return LassoObjectiveG(phi, y, lam=1.0)


@pytest.fixture
def prior_only_problem():
    """Phi = 0, so the posterior equals the Laplacian prior (tau = 1)."""
    return LassoObjectiveG(np.zeros((1, 1)), np.zeros(1), lam=1.0)
