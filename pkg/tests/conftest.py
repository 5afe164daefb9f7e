import numpy as np
import pytest

from zrplab.environment import (ConstantProfile, GaussianBumpProfile,
                                PoissonMoleculeModel)


@pytest.fixture
def bump_model():
    """Reference chemoattractant model: Gaussian bump, f(z) = 0.5 + 2/(1+z)."""
    return PoissonMoleculeModel(theta=GaussianBumpProfile())


@pytest.fixture
def flat_model():
    """Degenerate environment: no molecules anywhere, p = f(0) = 2.5."""
    return PoissonMoleculeModel(theta=ConstantProfile(0.0))


def unit_rate_model():
    """Homogeneous environment with every site rate exactly 1."""
    return PoissonMoleculeModel(
        theta=ConstantProfile(0.0),
        rate_of_count=lambda z: np.ones_like(np.asarray(z, dtype=np.float64)),
        bound_lo=1.0 - 1e-12, bound_hi=1.0 + 1e-12)
