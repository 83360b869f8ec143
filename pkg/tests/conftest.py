import numpy as np
import pytest

from brainunet.phantom import generate_phantom


@pytest.fixture(scope="session")
def phantom32():
    """One shared 32^3 phantom case (volume, mask)."""
    return generate_phantom(seed=7, dims=(32, 32, 32))


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
