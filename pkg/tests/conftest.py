import math
import warnings

import numpy as np
import pytest

from optomech.config import load_default
from optomech.model import (
    C_LIGHT, Drive, Environment, FeedbackChainConfig, MechanicalMode, OpticalMode, SystemConfig,
)
from optomech.response import PerturbativeWarning

LAMBDA = 780e-9
OMEGA_L = 2 * math.pi * C_LIGHT / LAMBDA
GAMMA_0 = OMEGA_L / (2 * 1e7)


def make_config(power=60e-6, delta_lw=1.0, gamma_in_ratio=1.0, g=1.0e19, modes=None,
                temperature=300.0, feedback=None) -> SystemConfig:
    """Small hand-built config around the reference operating point."""
    gamma_in = gamma_in_ratio * GAMMA_0
    optical = OpticalMode(GAMMA_0, gamma_in, delta_lw * (GAMMA_0 + gamma_in), OMEGA_L)
    if modes is None:
        modes = (MechanicalMode(0.3e-9, 2 * math.pi * 90e3, 2 * math.pi * 28.6e6, g, "probe"),)
    return SystemConfig(optical, tuple(modes), Drive(power), Environment(temperature),
                        feedback or FeedbackChainConfig())


@pytest.fixture(scope="session")
def ref_cf():
    return load_default()


@pytest.fixture(scope="session")
def ref(ref_cf):
    return ref_cf.system


@pytest.fixture
def quiet():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbativeWarning)
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# -- expensive shared runs (reference device at its configured drive power) --

@pytest.fixture(scope="session")
def settings(ref_cf):
    from optomech.scenarios import MeasurementSettings
    return MeasurementSettings.from_sim(ref_cf.sim)


@pytest.fixture(scope="session")
def saturated_point(ref, settings):
    """Feedback off above threshold; the lead-in is recorded as well."""
    from optomech.scenarios import measure_point
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbativeWarning)
        return measure_point(ref, ref.drive.power, False, settings, seed=101,
                             keep_trajectory=True, record_lead_in=True)


@pytest.fixture(scope="session")
def suppressed_point(ref, settings):
    """Same drive with the chain tuned to the critical gain."""
    from optomech.scenarios import measure_point
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbativeWarning)
        return measure_point(ref, ref.drive.power, True, settings, seed=102, keep_trajectory=True)


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
