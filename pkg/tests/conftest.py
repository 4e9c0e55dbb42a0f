import mpmath
import pytest

from pistab.scenarios import example

mpmath.mp.dps = 40


@pytest.fixture
def ex41():
    return example("4.1")


@pytest.fixture
def ex42():
    return example("4.2")


def mp_outflow(p, c, delta, x):
    """High-precision reference for ``p x exp(-c x**delta)``."""
    x = mpmath.mpf(x)
    return mpmath.mpf(p) * x * mpmath.exp(-mpmath.mpf(c) * x ** mpmath.mpf(delta))
