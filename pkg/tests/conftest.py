import numpy as np
import pytest

from discds.schedule import make_schedule
from discds.world import GaussianMixtureWorld, MixtureComponent, load_preset


@pytest.fixture(scope="session")
def sched():
    return make_schedule(1000)


@pytest.fixture(scope="session")
def pair2():
    return load_preset("pair2")


@pytest.fixture(scope="session")
def ring3():
    return load_preset("ring3")


@pytest.fixture(scope="session")
def overlap5():
    return load_preset("overlap5")


@pytest.fixture(scope="session")
def unit_world():
    """Single class, one standard-normal component at the origin."""
    return GaussianMixtureWorld(
        [[MixtureComponent(1.0, np.zeros(2), 1.0)]])


def make_two_class(mu0, mu1, sigma=1.0, kappa=8.0, priors=None):
    return GaussianMixtureWorld(
        [[MixtureComponent(1.0, np.asarray(mu0, dtype=float), sigma)],
         [MixtureComponent(1.0, np.asarray(mu1, dtype=float), sigma)]],
        priors=priors, kappa=kappa)
