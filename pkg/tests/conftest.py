import pytest

from glidepath.testkit import golden_single, golden_three_intersection, golden_turning


@pytest.fixture(scope="session")
def golden():
    return golden_single()


@pytest.fixture(scope="session")
def turning():
    return golden_turning()


@pytest.fixture(scope="session")
def three_intersection():
    return golden_three_intersection()
