from pathlib import Path

import numpy as np
import pytest

import pstc
from pstc.data import load_config
from pstc.offline import build_offline_tables
from pstc.sysmodel import ControllerModel, PlantModel, TriggerConfig

BATCH_CONFIG = Path(pstc.__file__).parent / "configs" / "batch_reactor.json"


@pytest.fixture(scope="session")
def batch_problem():
    return load_config(BATCH_CONFIG)


@pytest.fixture(scope="session")
def batch_tables(batch_problem):
    return build_offline_tables(batch_problem)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def scalar_plant():
    """dx/dt = -x + u + w, y = x."""
    return PlantModel([[-1.0]], [[1.0]], [[1.0]], [[1.0]])


@pytest.fixture
def double_integrator():
    return PlantModel([[0.0, 1.0], [0.0, 0.0]], [[0.0], [1.0]], [[1.0, 0.0]], [[0.0], [1.0]])


@pytest.fixture
def static_gain():
    def make(n_u=1, n_y=1, h=0.1, gain=-1.0):
        return ControllerModel(np.zeros((0, 0)), np.zeros((0, n_y)), np.zeros((n_u, 0)), gain * np.ones((n_u, n_y)), h)

    return make


@pytest.fixture
def trigger_cfg():
    return TriggerConfig(sigma=0.1, epsilon=0.0, kappa_max=5)
