import numpy as np
import pytest

import popmf


@pytest.fixture
def seir_model():
    return popmf.seir()


@pytest.fixture
def wsn_model():
    return popmf.wsn()


@pytest.fixture
def mrdl_model():
    return popmf.mrdl()


@pytest.fixture
def two_state_06():
    return popmf.two_state(popmf.TwoStateParams(0.6))


@pytest.fixture
def two_state_075():
    return popmf.two_state(popmf.TwoStateParams(0.75))


def all_builtin_models():
    return [
        ("seir", popmf.seir()),
        ("wsn", popmf.wsn()),
        ("mrdl", popmf.mrdl()),
        ("two_state", popmf.two_state()),
    ]


def simplex_points(n, count, seed=0):
    rng = np.random.default_rng(seed)
    return rng.dirichlet(np.ones(n), size=count)


def tangent_psd_min(w):
    """Smallest eigenvalue of a symmetric matrix restricted to the mean-zero subspace."""
    q = popmf.tangent_basis(w.shape[0])
    return float(np.min(np.linalg.eigvalsh(q.T @ w @ q)))
