import numpy as np
import pytest

from pmp_thermo.two_level import Baths


@pytest.fixture
def baths03() -> Baths:
    """Reference two-bath setting used throughout: z = 0.3, beta_c = gamma = 1."""
    return Baths.from_ratio(0.3)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240817)
