import math
from dataclasses import replace

import pytest
from hypothesis import given, strategies as st

from optomech.model import (
    HBAR, ConfigError, Drive, MechanicalMode, angular_to_hz, derived_rates, hz_to_angular,
    thermal_variance, validate, violations,
)

from conftest import GAMMA_0, OMEGA_L, make_config


def test_zero_mass_is_named():
    cfg = make_config(modes=(MechanicalMode(0.0, 1e3, 1e8, 1e18, "m"),))
    with pytest.raises(ConfigError) as err:
        validate(cfg)
    assert any(v.constraint == "mass > 0" and v.value == 0.0 for v in err.value.violations)


def test_all_violations_reported():
    cfg = make_config(power=-1.0, modes=(MechanicalMode(-1.0, -1.0, 1e8, 1e18, "m"),))
    found = {v.constraint for v in violations(cfg)}
    assert {"mass > 0", "gamma_m > 0", "power >= 0"} <= found


def test_uncoupled_cavity_valid():
    cfg = make_config(gamma_in_ratio=0.0)
    assert validate(cfg) is cfg


def test_reference_like_device_valid():
    mode = MechanicalMode(0.3e-9, hz_to_angular(90e3), hz_to_angular(28.6e6), 1e18, "crown6")
    cfg = make_config(modes=(mode,))
    validate(cfg)
    assert cfg.optical.quality_factor == pytest.approx(0.5e7)  # loaded Q at critical coupling
    assert cfg.optical.wavelength == pytest.approx(780e-9)


def test_duplicate_labels_and_low_q():
    m = MechanicalMode(1e-9, 2e8, 1e8, 0.0, "a")
    found = {v.constraint for v in violations(make_config(modes=(m, m)))}
    assert "unique mechanical labels" in found
    assert "omega_m/gamma_m > 1" in found


def test_no_modes():
    with pytest.raises(ConfigError, match="at least one"):
        validate(make_config(modes=()))


def test_nan_rejected():
    cfg = make_config(power=float("nan"))
    assert any(v.field == "drive.power" for v in violations(cfg))


def test_derived_rates_critical_coupling():
    r = derived_rates(make_config())
    assert r["gamma_total"] == pytest.approx(2 * GAMMA_0)
    assert r["escape_efficiency"] == pytest.approx(0.5)
    assert derived_rates(make_config(gamma_in_ratio=0.0))["escape_efficiency"] == 0.0


def test_photon_flux_hand_calculation():
    # 60 uW at 780 nm: E_photon = h c / lambda = 6.62607015e-34 * 299792458 / 780e-9 J
    e_photon = 6.62607015e-34 * 299792458.0 / 780e-9
    expected = 60e-6 / e_photon
    assert expected == pytest.approx(2.356e14, rel=1e-3)
    assert derived_rates(make_config(power=60e-6))["photon_flux"] == pytest.approx(expected, rel=1e-12)
    assert Drive(60e-6).photon_flux(OMEGA_L) == pytest.approx(60e-6 / (HBAR * OMEGA_L))


def test_hz_conversion_examples():
    assert hz_to_angular(28.6e6) == 2 * math.pi * 28.6e6
    assert hz_to_angular(0.0) == 0.0


@given(st.floats(min_value=-1e12, max_value=1e12, allow_nan=False))
def test_hz_round_trip(f):
    assert angular_to_hz(hz_to_angular(f)) == pytest.approx(f, rel=4e-16, abs=1e-300)


@given(
    power=st.floats(0, 1e-2),
    mass=st.floats(1e-12, 1e-6),
    q=st.floats(1.5, 1e6),
)
def test_validate_idempotent(power, mass, q):
    m = MechanicalMode(mass, 1e8 / q, 1e8, 1e18, "m")
    cfg = make_config(power=power, modes=(m,))
    assert validate(validate(cfg)) == validate(cfg)


def test_thermal_variance_equipartition_form():
    m = MechanicalMode(0.3e-9, 1e3, 1e8, 0.0, "m")
    assert thermal_variance(m, 300.0) == pytest.approx(1.380649e-23 * 300 / (0.3e-9 * 1e16))


def test_frozen_configs():
    cfg = make_config()
    with pytest.raises(Exception):
        cfg.drive = Drive(1.0)
    assert replace(cfg, rng_seed=3).rng_seed == 3
