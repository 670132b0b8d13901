import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from accflow.core import REFERENCE_ROAD, RoadConfig

settings.register_profile("default", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture
def ref_road() -> RoadConfig:
    return REFERENCE_ROAD


@pytest.fixture
def unit_road() -> RoadConfig:
    return RoadConfig(a=-10.0, b=10.0, base_factor=1.0)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)
