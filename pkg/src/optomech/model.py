"""Physical parameters of the opto-electromechanical system.

All quantities stored on these dataclasses are SI with angular frequencies
in rad/s.  Ordinary-frequency (Hz) values only appear in configuration
files and are converted once, in :mod:`optomech.config`.

Optical decay rates are *amplitude* rates: the intracavity energy decays
at ``2 * gamma`` and the optical quality factor is ``omega_laser / (2 gamma)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any

from scipy import constants

HBAR = constants.hbar
K_B = constants.k
C_LIGHT = constants.c
TWO_PI = 2.0 * math.pi


def hz_to_angular(value_hz):
    """Ordinary frequency (Hz) to angular frequency (rad/s)."""
    return TWO_PI * value_hz


def angular_to_hz(value_rad_s):
    """Angular frequency (rad/s) to ordinary frequency (Hz)."""
    return value_rad_s / TWO_PI


@dataclass(frozen=True)
class Violation:
    field: str
    constraint: str
    value: Any

    def __str__(self) -> str:
        return f"{self.field}: requires {self.constraint}, got {self.value!r}"


class ConfigError(ValueError):
    """Raised with the complete list of invariant violations."""

    def __init__(self, violations: list[Violation]):
        self.violations = list(violations)
        lines = "\n  ".join(str(v) for v in self.violations)
        super().__init__(f"{len(self.violations)} invalid setting(s):\n  {lines}")


@dataclass(frozen=True)
class OpticalMode:
    gamma_0: float  # intrinsic amplitude decay rate, rad/s
    gamma_in: float  # input coupling rate, rad/s
    delta_0: float  # bare laser-cavity detuning, rad/s
    omega_laser: float  # optical carrier, rad/s

    @property
    def gamma(self) -> float:
        return self.gamma_in + self.gamma_0

    @property
    def quality_factor(self) -> float:
        return self.omega_laser / (2.0 * self.gamma)

    @property
    def wavelength(self) -> float:
        return TWO_PI * C_LIGHT / self.omega_laser


@dataclass(frozen=True)
class MechanicalMode:
    mass: float  # effective mass, kg
    gamma_m: float  # intrinsic energy damping rate, rad/s
    omega_m: float  # resonance, rad/s
    coupling_g: float  # cavity pull per displacement, rad/s per m
    label: str = "mode"

    @property
    def quality_factor(self) -> float:
        return self.omega_m / self.gamma_m

    @property
    def stiffness(self) -> float:
        return self.mass * self.omega_m**2


@dataclass(frozen=True)
class Drive:
    power: float  # W

    def photon_flux(self, omega_laser: float) -> float:
        """Input photon flux ``|a_in|^2`` in photons/s."""
        return self.power / (HBAR * omega_laser)


@dataclass(frozen=True)
class Environment:
    temperature: float = 300.0
    hbar: float = HBAR
    k_b: float = K_B


@dataclass(frozen=True)
class FeedbackChainConfig:
    """Electrical feedback path: bandpass cascade, phase shifter, attenuator.

    ``bandwidth`` is the -3 dB full width of each second-order section.
    ``gain_mag`` is the loop gain magnitude at ``center_freq`` in N*s
    (newtons of actuation force per photon/s of photocurrent).
    """

    center_freq: float = hz_to_angular(14.0e6)
    bandwidth: float = hz_to_angular(1.0e6)
    sections: int = 2
    phase_deg: float = 0.0
    gain_mag: float = 0.0
    enabled: bool = False
    delay_samples: int = 1


@dataclass(frozen=True)
class SystemConfig:
    optical: OpticalMode
    mechanics: tuple[MechanicalMode, ...]
    drive: Drive
    environment: Environment = field(default_factory=Environment)
    feedback: FeedbackChainConfig = field(default_factory=FeedbackChainConfig)
    rng_seed: int = 0

    def mode(self, label: str) -> MechanicalMode:
        for m in self.mechanics:
            if m.label == label:
                return m
        raise KeyError(f"no mechanical mode labelled {label!r}")

    def mode_index(self, label: str) -> int:
        for j, m in enumerate(self.mechanics):
            if m.label == label:
                return j
        raise KeyError(f"no mechanical mode labelled {label!r}")

    @property
    def labels(self) -> list[str]:
        return [m.label for m in self.mechanics]

    @property
    def photon_flux(self) -> float:
        return self.drive.photon_flux(self.optical.omega_laser)

    def with_power(self, power: float) -> "SystemConfig":
        return replace(self, drive=Drive(power))

    def with_feedback(self, **changes) -> "SystemConfig":
        return replace(self, feedback=replace(self.feedback, **changes))

    def with_optical(self, **changes) -> "SystemConfig":
        return replace(self, optical=replace(self.optical, **changes))

    def with_mode(self, label: str, **changes) -> "SystemConfig":
        modes = tuple(replace(m, **changes) if m.label == label else m for m in self.mechanics)
        return replace(self, mechanics=modes)


def _finite(x) -> bool:
    try:
        return math.isfinite(x)
    except TypeError:
        return False


def _check(out: list[Violation], name: str, value, ok: bool, constraint: str) -> None:
    if not _finite(value) or not ok:
        out.append(Violation(name, constraint, value))


def violations(config: SystemConfig) -> list[Violation]:
    """Every invariant violation in ``config`` (empty when valid)."""
    out: list[Violation] = []
    o = config.optical
    _check(out, "optical.gamma_0", o.gamma_0, o.gamma_0 > 0, "gamma_0 > 0")
    _check(out, "optical.gamma_in", o.gamma_in, o.gamma_in >= 0, "gamma_in >= 0")
    _check(out, "optical.omega_laser", o.omega_laser, o.omega_laser > 0, "omega_laser > 0")
    _check(out, "optical.delta_0", o.delta_0, True, "finite delta_0")
    if _finite(o.gamma_0) and _finite(o.gamma_in):
        _check(out, "optical.gamma", o.gamma, o.gamma > 0, "gamma_in + gamma_0 > 0")

    if len(config.mechanics) == 0:
        out.append(Violation("mechanics", "at least one mechanical mode", 0))
    seen: set[str] = set()
    for m in config.mechanics:
        p = f"mechanics[{m.label}]"
        if m.label in seen:
            out.append(Violation(f"{p}.label", "unique mechanical labels", m.label))
        seen.add(m.label)
        _check(out, f"{p}.mass", m.mass, m.mass > 0, "mass > 0")
        _check(out, f"{p}.gamma_m", m.gamma_m, m.gamma_m > 0, "gamma_m > 0")
        _check(out, f"{p}.omega_m", m.omega_m, m.omega_m > 0, "omega_m > 0")
        _check(out, f"{p}.coupling_g", m.coupling_g, True, "finite coupling_g")
        if _finite(m.gamma_m) and _finite(m.omega_m) and m.gamma_m > 0 and m.omega_m > 0:
            q = m.omega_m / m.gamma_m
            _check(out, f"{p}.quality_factor", q, q > 1, "omega_m/gamma_m > 1")

    _check(out, "drive.power", config.drive.power, config.drive.power >= 0, "power >= 0")
    env = config.environment
    _check(out, "environment.temperature", env.temperature, env.temperature >= 0, "temperature >= 0")
    if env.hbar != HBAR or env.k_b != K_B:
        out.append(Violation("environment.constants", "CODATA hbar and k_B", (env.hbar, env.k_b)))

    fb = config.feedback
    _check(out, "feedback.center_freq", fb.center_freq, fb.center_freq > 0, "center_freq > 0")
    _check(out, "feedback.bandwidth", fb.bandwidth, fb.bandwidth > 0, "bandwidth > 0")
    _check(out, "feedback.gain_mag", fb.gain_mag, fb.gain_mag >= 0, "gain_mag >= 0")
    _check(out, "feedback.phase_deg", fb.phase_deg, True, "finite phase_deg")
    if not (isinstance(fb.sections, int) and fb.sections >= 1):
        out.append(Violation("feedback.sections", "integer sections >= 1", fb.sections))
    if not (isinstance(fb.delay_samples, int) and fb.delay_samples >= 1):
        out.append(Violation("feedback.delay_samples", "integer delay_samples >= 1", fb.delay_samples))
    if not isinstance(config.rng_seed, int) or config.rng_seed < 0:
        out.append(Violation("rng_seed", "non-negative integer", config.rng_seed))
    return out


def validate(config: SystemConfig) -> SystemConfig:
    """Return ``config`` unchanged, or raise :class:`ConfigError` listing all violations."""
    found = violations(config)
    if found:
        raise ConfigError(found)
    return config


def derived_rates(config: SystemConfig) -> dict[str, float]:
    config = validate(config)
    o = config.optical
    return {
        "gamma_total": o.gamma,
        "photon_flux": config.photon_flux,
        "escape_efficiency": o.gamma_in / o.gamma,
    }


def thermal_variance(mode: MechanicalMode, temperature: float) -> float:
    """Equipartition position variance ``k_B T / (m omega_m^2)``."""
    return K_B * temperature / mode.stiffness


def thermal_force_std(mode: MechanicalMode, temperature: float) -> float:
    """White thermal force amplitude per sqrt(s), ``sqrt(2 Gamma k_B T m)``.

    The factor of two makes the stationary variance satisfy equipartition.
    """
    return math.sqrt(2.0 * mode.gamma_m * K_B * temperature * mode.mass)
