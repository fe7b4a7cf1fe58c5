import numpy as np
import pytest

from markovflow import builder as bd, quotient as qt


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)


@pytest.fixture(scope="session")
def bolza():
    """The genus-2 octagon group, shared across the suite (caches balls)."""
    return qt.bolza_group()


@pytest.fixture(scope="session")
def small_family(bolza):
    """A quick partial-coverage covering family shared by the builder and
    pipeline tests (wide cores keep the sampled return map well fed)."""
    return bd.build_pre_markov(bolza, 0.9, seed=11, epsilon=0.135,
                               d_factor=2.2, coverage_target=0.02,
                               net_points=40000, max_sections=200,
                               time_budget=120, strict=False)
