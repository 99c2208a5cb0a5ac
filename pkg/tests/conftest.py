import numpy as np
import pytest

from src.evolve.gates import clear_gate_cache
from tests.helpers import lattice


@pytest.fixture(autouse=True)
def _fresh_gate_cache():
    clear_gate_cache()
    yield
    clear_gate_cache()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def all_terms_model():
    """3 sites, d = 4, every term of the master equation switched on."""
    return lattice(3, 3, J=1.0, U=0.3, gamma1=0.1, gamma2=0.4)


@pytest.fixture
def pair_loss_model():
    """Site 0 with two-particle loss only; site 1 is an idle vacuum partner."""
    return lattice(2, 3, gamma2=0.5)
