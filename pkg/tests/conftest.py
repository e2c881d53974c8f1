import numpy as np
import pytest

from kslab import measures as ms
from kslab import model


@pytest.fixture(scope="session")
def torus():
    return ms.DomainGrid(0.0, 1.0, 128, "torus")


@pytest.fixture(scope="session")
def torus64():
    return ms.DomainGrid(0.0, 1.0, 64, "torus")


@pytest.fixture(scope="session")
def box():
    return ms.DomainGrid(0.0, 1.0, 128, "reflecting")


@pytest.fixture(scope="session")
def ou():
    return model.torus_ou()


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
