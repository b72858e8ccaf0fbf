import pytest

from lindstedt import models


@pytest.fixture(scope="session")
def pendulum():
    return models.pendulum()


@pytest.fixture(scope="session")
def two_by_two():
    return models.two_by_two()


@pytest.fixture(scope="session")
def forced_pendulum():
    return models.forced_pendulum()
