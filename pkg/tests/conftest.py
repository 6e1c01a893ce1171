import numpy as np
import pytest

from omega_pricer import LevyModel


@pytest.fixture(scope="session")
def crash_model():
    """Finite-variation exponential-crash model, martingale-calibrated at r=5%."""
    return LevyModel.calibrated(r=0.05, sigma=0.0, lam=6.0, phi=2.0)


@pytest.fixture(scope="session")
def crash_model_sigma():
    """Same jump structure with sigma = 0.2."""
    return LevyModel.calibrated(r=0.05, sigma=0.2, lam=6.0, phi=2.0)


@pytest.fixture(scope="session")
def bs_model():
    """Black-Scholes with mu = r = 5%, sigma = 20%."""
    return LevyModel.black_scholes(mu=0.05, sigma=0.2)


def classical_decomp_values(decomp, x):
    """Independent evaluation of sum ups_i e^{gamma_i x} used as test oracle."""
    g = np.asarray(decomp.gammas)
    u = np.asarray(decomp.upsilons)
    x = np.atleast_1d(np.asarray(x, dtype=float))
    return np.exp(np.outer(x, g)) @ u
