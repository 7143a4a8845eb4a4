"""Feedback-stabilised cavity opto-electromechanics: mean field, linear response,
stochastic time-domain simulation, feedback chain and spectral analysis."""
from .model import (
    ConfigError, Drive, Environment, FeedbackChainConfig, MechanicalMode, OpticalMode,
    SystemConfig, angular_to_hz, derived_rates, hz_to_angular, validate,
)
from .steady_state import SteadyState, select_branch, solve_mean_field, transmitted_mean_field
from .response import (
    FrequencyResponse, bare_susceptibility, critical_gain, effective_params,
    instability_threshold, modified_susceptibility, transduction_transfer,
)

__version__ = "0.1.0"
