import numpy as np
import pytest

from tpsdesign.thermal import GridSpec, MaterialProperties, ThermalScenario, solve_fd


@pytest.fixture(scope="session")
def scenario():
    return ThermalScenario()


@pytest.fixture(scope="session")
def nominal():
    return MaterialProperties(200.0, 1.0, 800.0)


@pytest.fixture(scope="session")
def default_field(scenario, nominal):
    return solve_fd(scenario, nominal, GridSpec())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
