import pytest

from ssmatch import SspConfig, SyntheticSpec, generate_suite


@pytest.fixture(scope="session")
def default_cfg():
    return SspConfig()


@pytest.fixture(scope="session")
def suite200():
    """The 200-episode suite used by the statistical acceptance checks."""
    return generate_suite(SyntheticSpec(), 200, shots=1)


@pytest.fixture(scope="session")
def suite40():
    return generate_suite(SyntheticSpec(), 40, shots=1)
