import pytest

from helpers import Setup, diamond_bundle, linear_bundle, make_setup


@pytest.fixture(scope="session")
def setup() -> Setup:
    return make_setup()


@pytest.fixture(scope="session")
def diamond(setup):
    return diamond_bundle(setup)


@pytest.fixture(scope="session")
def single_bundle(setup):
    return linear_bundle(setup, 1)
