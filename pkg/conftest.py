"""
Shared pytest fixtures for the solver toolkit
Small synthetic problems plus the --runslow switch for acceptance-scale checks
"""

import pytest

from analysis import reference_minimizer
from datasets import synth_logistic
from losses import LossModel, curvature

collect_ignore = ["examples", "scripts"]


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False, help="run acceptance-scale checks"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: acceptance-scale check, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def small_dataset():
    return synth_logistic(8, 3, 0)


@pytest.fixture
def logistic_model(small_dataset):
    return LossModel("logistic-l2", 1.0 / small_dataset.n)


@pytest.fixture
def quadratic_model(small_dataset):
    return LossModel("quadratic-l2", 1.0 / small_dataset.n)


@pytest.fixture
def logistic_reference(small_dataset, logistic_model):
    return reference_minimizer(logistic_model, small_dataset)


@pytest.fixture
def saga_step_size(small_dataset, logistic_model):
    constants = curvature(logistic_model, small_dataset)
    return constants.nu / (11.0 * constants.delta**2 * small_dataset.n)
