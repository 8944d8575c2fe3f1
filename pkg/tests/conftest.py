import sys
import warnings
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

from epictrl import ModelInstance, build_geometry, constant, fig1_model, fig2_model  # noqa: E402

settings.register_profile("default", deadline=None, max_examples=30,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def fig1():
    return ModelInstance(fig1_model(), 0.05)


@pytest.fixture(scope="session")
def fig2():
    return ModelInstance(fig2_model(), 0.05)


@pytest.fixture(scope="session")
def sir():
    return ModelInstance(constant(0.3), 0.1)


@pytest.fixture(scope="session")
def g1(fig1):
    return build_geometry(fig1, 0.2)


@pytest.fixture(scope="session")
def g2(fig2):
    return build_geometry(fig2, 0.2)


@pytest.fixture(scope="session")
def g2_high(fig2):
    return build_geometry(fig2, 0.5)


@pytest.fixture(scope="session")
def gs(sir):
    return build_geometry(sir, 0.2)


@pytest.fixture(scope="session")
def cx_rate():
    from epictrl import counterexample_model
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return counterexample_model()
