import math

import pytest

from permflow.geometry import build_grid

R_IN, R_OUT = 1.0, 2.0
LN2 = math.log(2.0)


@pytest.fixture(scope="session")
def grid64():
    return build_grid(R_IN, R_OUT, 64, 128)


@pytest.fixture(scope="session")
def grid32():
    return build_grid(R_IN, R_OUT, 32, 64)
