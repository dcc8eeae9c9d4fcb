import os
import sys

import pytest

# Ensure the project root is on sys.path so crowding_core and main can be imported
sys.path.append(os.path.dirname(os.path.dirname(__file__)))

REPO_ROOT = os.path.dirname(os.path.dirname(__file__))


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False, help="run acceptance-scale Monte Carlo tests")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale test, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def default_config_path():
    return os.path.join(REPO_ROOT, "default.json")
