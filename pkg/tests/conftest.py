import numpy as np
import pytest

from utils.imaging import PlaneTensor


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run full-size synthetic corpus tests")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def blank_tensor() -> PlaneTensor:
    return PlaneTensor(data=np.zeros((3, 224, 224)))
