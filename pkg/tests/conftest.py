import numpy as np
import pytest

from podose.engine import TrialConfig
from podose.modelprior import NormalPrior


@pytest.fixture(scope="session")
def prior():
    return NormalPrior(1.0, -1.0, 1.0, 1.0)


@pytest.fixture(scope="session")
def poblrm_config(prior):
    # the calibrated non-randomised logistic setup; coarse grid keeps tests fast
    return TrialConfig(
        design="poblrm",
        skeleton_p1=0.15,
        skeleton_nu=0.01,
        prior=prior,
        n_cohorts=15,
        m1=3,
        quad_nodes=81,
    )


@pytest.fixture(scope="session")
def pocrm_config():
    return TrialConfig(
        design="pocrm",
        skeleton_p1=0.1,
        skeleton_nu=0.05,
        crm_sigma=0.5,
        n_cohorts=15,
        m1=3,
        quad_nodes=201,
    )


@pytest.fixture(scope="session")
def rng():
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(42)))
