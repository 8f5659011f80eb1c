import numpy as np
import pytest

from pergreen.coeff_fields import identity_field, layered_sine_field, skew_test_field


@pytest.fixture(scope="session")
def eye3():
    return identity_field(3)


@pytest.fixture(scope="session")
def layered3():
    return layered_sine_field(3)


@pytest.fixture(scope="session")
def skew3():
    return skew_test_field(3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)
