"""Shared fixtures and closed-form helpers for the test suite."""

import numpy as np
import pytest

from occusim.limit_oracle import LimitParams
from occusim.stable_motion import StableParams, TestFunction

# the name pattern makes pytest try to collect this dataclass
TestFunction.__test__ = False


@pytest.fixture
def ref_params():
    """Reference regime: d = 1, alpha = 3/4, so h = 5/3."""
    return LimitParams(0.75, 1)


@pytest.fixture
def unit_phi():
    return TestFunction(1.0, (0.0,), 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def heat_pairing(phi, psi, s, dim):
    """<phi, T_s psi> for alpha = 2, exact.

    The time-s kernel at alpha = 2 is a centred Gaussian with variance 2s
    per coordinate, so the pairing of two Gaussian bumps is the Gaussian
    overlap integral with combined variance sigma_phi^2 + sigma_psi^2 + 2s.
    """
    v = phi.sigma ** 2 + psi.sigma ** 2 + 2.0 * s
    c1 = np.asarray(phi.center, dtype=float)
    c2 = np.asarray(psi.center, dtype=float)
    dist2 = float(np.sum((c1 - c2) ** 2))
    return (phi.mass * psi.mass * (2.0 * np.pi * v) ** (-dim / 2.0)
            * np.exp(-dist2 / (2.0 * v)))


def heat_pointwise(phi, s, x):
    """(T_s phi)(x) for alpha = 2, exact (d from len(phi.center))."""
    d = len(phi.center)
    v = phi.sigma ** 2 + 2.0 * s
    c = np.asarray(phi.center, dtype=float)
    x = np.asarray(x, dtype=float)
    dist2 = float(np.sum((x - c) ** 2))
    return phi.amplitude * (phi.sigma ** 2 / v) ** (d / 2.0) \
        * np.exp(-dist2 / (2.0 * v))
