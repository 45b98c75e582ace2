"""Occupation time fluctuations of critical branching particle systems.

Particles move in R^d by symmetric alpha-stable motion and branch at an
exponential rate with a critical offspring law. The package simulates the
measure-valued system, forms the rescaled occupation time fluctuation
process, and checks its second-order statistics against closed-form
covariance oracles, including the sub-fractional and fractional Brownian
motion limits that appear for alpha < d < 2 alpha.

Modules:
    stable_motion    alpha-stable increments, Fourier transforms, semigroup
    offspring_law    critical offspring distributions and their pgfs
    particle_system  the branching particle simulator
    occupation       fluctuation paths, space-time pairings, v and n
    limit_oracle     limit covariances, constants, exact finite-T oracles
    mc_stats         replicated experiments, estimators, reports
    cli              command line entry points
"""

__version__ = "0.1.0"

from .stable_motion import StableParams, TestFunction
from .offspring_law import OffspringLaw
from .particle_system import SimulationWindow, InitSpec, SimConfig, SystemState
from .occupation import TimeWeight, FluctuationPath
from .limit_oracle import LimitParams, GaussianPathSample
from .mc_stats import ExperimentSpec, Report

__all__ = [
    "StableParams", "TestFunction", "OffspringLaw",
    "SimulationWindow", "InitSpec", "SimConfig", "SystemState",
    "TimeWeight", "FluctuationPath",
    "LimitParams", "GaussianPathSample",
    "ExperimentSpec", "Report",
    "__version__",
]
