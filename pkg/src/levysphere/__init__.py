"""Spectral and Euler-Maruyama approximation of the stochastic heat equation
on the unit sphere driven by additive Levy noise."""

__version__ = "0.1.0"

from .basis import (CoeffField, HarmonicIndex, LatLonGrid, SpherePoint, eval_real_sh,
                    sobolev_norm_sq, synthesize)
from .errors import (ConfigurationError, DomainError, LevySphereError, StabilityError,
                     UnsupportedDriverError)
from .harness import (ExperimentConfig, Level, RateReport, TestFunctional, eval_test_functional,
                      fit_rate, run)
from .moments import (ErrorBreakdown, InitialData, MomentReport, decay_integral,
                      em_moment_recursion, em_strong_error_sq, mean_field, second_moment,
                      spectral_strong_error_sq)
from .noise import DriverKind, NoiseSpec, sample_increments, sample_jump_times
from .render import RenderSpec, exp_transform, write_image
from .solver import Scheme, SolverConfig, em_evolve, exact_evolve
from .timegrid import TimeGrid

__all__ = [
    "CoeffField", "HarmonicIndex", "LatLonGrid", "SpherePoint", "eval_real_sh", "sobolev_norm_sq",
    "synthesize", "ConfigurationError", "DomainError", "LevySphereError", "StabilityError",
    "UnsupportedDriverError", "ExperimentConfig", "Level", "RateReport", "TestFunctional",
    "eval_test_functional", "fit_rate", "run", "ErrorBreakdown", "InitialData", "MomentReport",
    "decay_integral", "em_moment_recursion", "em_strong_error_sq", "mean_field", "second_moment",
    "spectral_strong_error_sq", "DriverKind", "NoiseSpec", "sample_increments",
    "sample_jump_times", "RenderSpec", "exp_transform", "write_image", "Scheme", "SolverConfig",
    "em_evolve", "exact_evolve", "TimeGrid",
]
