"""Flat key-value configuration files.

Grammar, one setting per line::

    # comment (also allowed after a value)
    section.key_unit = value

Blank lines are ignored.  Keys carry their unit as a suffix; ordinary
frequencies are given in Hz multiples and converted to rad/s here, and
nowhere else.  Mechanical modes are declared as ``mode.<label>.<key>``;
their order in the file is the mode order.  Linewidth keys
(``gamma_m_kHz``) are full widths in Hz, i.e. ``Gamma_0 / 2 pi``.

Recognised keys
---------------
``rng_seed``
``optical.wavelength_nm``
``optical.intrinsic_Q`` or ``optical.gamma_0_MHz`` (amplitude rate / 2 pi)
``optical.coupling_ratio`` (gamma_in / gamma_0) or ``optical.gamma_in_MHz``
``optical.delta_0_linewidths`` (units of gamma) or ``optical.delta_0_MHz``
``drive.power_uW``
``environment.temperature_K``
``mode.<label>.omega_m_MHz``, ``.gamma_m_kHz``, ``.mass_ug``,
``.coupling_g_GHz_per_nm`` (g / 2 pi)
``feedback.center_MHz``, ``.bandwidth_MHz``, ``.sections``, ``.phase_deg``,
``.gain_mag_Ns``, ``.enabled``, ``.delay_samples``
``scenario.*`` and ``sim.*`` are passed through untyped to the runner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .model import (
    C_LIGHT, TWO_PI, Drive, Environment, FeedbackChainConfig, MechanicalMode,
    OpticalMode, SystemConfig, Violation, ConfigError, hz_to_angular, validate,
)

MODE_KEYS = ("omega_m_MHz", "gamma_m_kHz", "mass_ug", "coupling_g_GHz_per_nm")
FEEDBACK_KEYS = ("center_MHz", "bandwidth_MHz", "sections", "phase_deg", "gain_mag_Ns",
                 "enabled", "delay_samples")
TOP_KEYS = {
    "rng_seed",
    "optical.wavelength_nm", "optical.intrinsic_Q", "optical.gamma_0_MHz",
    "optical.coupling_ratio", "optical.gamma_in_MHz",
    "optical.delta_0_linewidths", "optical.delta_0_MHz",
    "drive.power_uW", "environment.temperature_K",
    *(f"feedback.{k}" for k in FEEDBACK_KEYS),
}


@dataclass
class ConfigFile:
    """Raw settings plus the validated physical configuration built from them."""

    entries: dict[str, str]
    system: SystemConfig
    scenario: dict[str, str] = field(default_factory=dict)
    sim: dict[str, str] = field(default_factory=dict)
    source: str = "<memory>"

    def text(self) -> str:
        return dump_entries(self.entries)


def parse_entries(text: str) -> dict[str, str]:
    entries: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError([Violation(f"line {lineno}", "key = value", raw)])
        key, value = (part.strip() for part in line.split("=", 1))
        if key in entries:
            raise ConfigError([Violation(key, "key set once", value)])
        entries[key] = value
    return entries


def dump_entries(entries: dict[str, str]) -> str:
    return "".join(f"{k} = {v}\n" for k, v in entries.items())


def _bool(text: str) -> bool:
    t = text.lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def build_system(entries: dict[str, str]) -> SystemConfig:
    errors: list[Violation] = []
    modes: dict[str, dict[str, str]] = {}
    for key, value in entries.items():
        if key.startswith(("scenario.", "sim.")) or key in TOP_KEYS:
            continue
        parts = key.split(".")
        if len(parts) == 3 and parts[0] == "mode" and parts[2] in MODE_KEYS:
            modes.setdefault(parts[1], {})[parts[2]] = value
        else:
            errors.append(Violation(key, "a recognised key", value))

    def num(key, default=None, cast=float):
        if key not in entries:
            if default is None:
                errors.append(Violation(key, "required", None))
                return math.nan
            return default
        try:
            return cast(entries[key])
        except ValueError:
            errors.append(Violation(key, f"{cast.__name__} value", entries[key]))
            return math.nan

    def exactly_one(a, b):
        if (a in entries) == (b in entries):
            errors.append(Violation(f"{a} | {b}", "exactly one of the two", None))

    exactly_one("optical.intrinsic_Q", "optical.gamma_0_MHz")
    exactly_one("optical.coupling_ratio", "optical.gamma_in_MHz")
    exactly_one("optical.delta_0_linewidths", "optical.delta_0_MHz")

    wavelength = num("optical.wavelength_nm") * 1e-9
    omega_laser = TWO_PI * C_LIGHT / wavelength if wavelength > 0 else math.nan
    if "optical.intrinsic_Q" in entries:
        gamma_0 = omega_laser / (2.0 * num("optical.intrinsic_Q"))
    else:
        gamma_0 = hz_to_angular(num("optical.gamma_0_MHz", math.nan) * 1e6)
    if "optical.coupling_ratio" in entries:
        gamma_in = num("optical.coupling_ratio") * gamma_0
    else:
        gamma_in = hz_to_angular(num("optical.gamma_in_MHz", math.nan) * 1e6)
    if "optical.delta_0_linewidths" in entries:
        delta_0 = num("optical.delta_0_linewidths") * (gamma_0 + gamma_in)
    else:
        delta_0 = hz_to_angular(num("optical.delta_0_MHz", math.nan) * 1e6)

    mechanics = []
    for label, spec in modes.items():
        missing = [k for k in MODE_KEYS if k not in spec]
        for k in missing:
            errors.append(Violation(f"mode.{label}.{k}", "required", None))
        if missing:
            continue
        try:
            mechanics.append(MechanicalMode(
                mass=float(spec["mass_ug"]) * 1e-9,
                gamma_m=hz_to_angular(float(spec["gamma_m_kHz"]) * 1e3),
                omega_m=hz_to_angular(float(spec["omega_m_MHz"]) * 1e6),
                coupling_g=hz_to_angular(float(spec["coupling_g_GHz_per_nm"]) * 1e18),
                label=label,
            ))
        except ValueError as exc:
            errors.append(Violation(f"mode.{label}", "numeric values", str(exc)))

    fb_defaults = FeedbackChainConfig()
    try:
        enabled = _bool(entries.get("feedback.enabled", "false"))
    except ValueError:
        errors.append(Violation("feedback.enabled", "boolean", entries["feedback.enabled"]))
        enabled = False
    feedback = FeedbackChainConfig(
        center_freq=hz_to_angular(num("feedback.center_MHz", fb_defaults.center_freq / TWO_PI / 1e6) * 1e6),
        bandwidth=hz_to_angular(num("feedback.bandwidth_MHz", fb_defaults.bandwidth / TWO_PI / 1e6) * 1e6),
        sections=num("feedback.sections", fb_defaults.sections, int),
        phase_deg=num("feedback.phase_deg", fb_defaults.phase_deg),
        gain_mag=num("feedback.gain_mag_Ns", fb_defaults.gain_mag),
        enabled=enabled,
        delay_samples=num("feedback.delay_samples", fb_defaults.delay_samples, int),
    )
    power = num("drive.power_uW") * 1e-6
    temperature = num("environment.temperature_K", 300.0)
    seed = num("rng_seed", 0, int)
    if errors:
        raise ConfigError(errors)
    config = SystemConfig(
        optical=OpticalMode(gamma_0, gamma_in, delta_0, omega_laser),
        mechanics=tuple(mechanics),
        drive=Drive(power),
        environment=Environment(temperature),
        feedback=feedback,
        rng_seed=seed,
    )
    return validate(config)


def apply_overrides(entries: dict[str, str], overrides: list[str] | dict[str, str]) -> dict[str, str]:
    """Return a copy of ``entries`` with ``key=value`` overrides applied.

    Overrides may only replace keys already present in the file.
    """
    pairs = overrides.items() if isinstance(overrides, dict) else (
        tuple(s.strip() for s in o.split("=", 1)) if "=" in o else (o, None) for o in overrides
    )
    out = dict(entries)
    errors = []
    for key, value in pairs:
        if value is None:
            errors.append(Violation(key, "key=value override", None))
        elif key not in out:
            errors.append(Violation(key, "override of an existing key", value))
        else:
            out[key] = str(value)
    if errors:
        raise ConfigError(errors)
    return out


def from_entries(entries: dict[str, str], source: str = "<memory>") -> ConfigFile:
    system = build_system(entries)
    scenario = {k[len("scenario."):]: v for k, v in entries.items() if k.startswith("scenario.")}
    sim = {k[len("sim."):]: v for k, v in entries.items() if k.startswith("sim.")}
    return ConfigFile(entries, system, scenario, sim, source)


def load(path, overrides=()) -> ConfigFile:
    text = Path(path).read_text()
    entries = apply_overrides(parse_entries(text), overrides)
    return from_entries(entries, str(path))


def default_text() -> str:
    return resources.files("optomech").joinpath("data/reference_device.cfg").read_text()


def load_default(overrides=()) -> ConfigFile:
    entries = apply_overrides(parse_entries(default_text()), overrides)
    return from_entries(entries, "reference_device.cfg")
