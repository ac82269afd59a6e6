import numpy as np
import pytest

from ellmix.experiments import single_preset, three_shell_mixture


@pytest.fixture
def rng():
    return np.random.Generator(np.random.PCG64(12345))


@pytest.fixture(scope="session")
def preset3():
    return single_preset(3)


@pytest.fixture(scope="session")
def three_shells():
    return three_shell_mixture()
