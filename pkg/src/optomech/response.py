"""Linearized frequency-domain response of the coupled cavity and mechanics.

Fourier convention: a time signal ``f(t) = int F(w) exp(+i w t) dw``, so
``d/dt -> +i w``.  The conjugate of a fluctuation therefore contributes
``[da(-w)]^*`` at frequency ``w``.  Every coefficient below is written as a
rational function of ``w`` (conjugation only touches the static mean
fields) so it continues analytically to complex ``w`` for pole searches.

The loop algebra lives in :func:`loop_terms`.  Radiation pressure and
feedback enter the inverse susceptibility as

    chi^-1(w) = chi_0^-1(w) + self_energy(w, G),
    self_energy = -K_rad(w) - G(w) T(w)

where ``K_rad`` is the radiation-pressure force per unit displacement and
``T`` the photocurrent per unit displacement.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
from scipy.optimize import brentq

from .model import HBAR, MechanicalMode, SystemConfig, validate
from .steady_state import SteadyState, select_branch, transmitted_mean_field

UNITS = {
    "susceptibility": "m/N",
    "transduction": "photons/s per m",
    "gain": "N*s",
    "force_per_displacement": "N/m",
}

Gain = Union[complex, float, Callable[[np.ndarray], np.ndarray], "FrequencyResponse", np.ndarray]


class SingularResponseError(ArithmeticError):
    pass


class NoThresholdError(RuntimeError):
    pass


class PerturbativeWarning(RuntimeWarning):
    pass


@dataclass
class FrequencyResponse:
    omega_grid: np.ndarray
    values: np.ndarray
    kind: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.omega_grid = np.asarray(self.omega_grid, dtype=float)
        self.values = np.asarray(self.values, dtype=complex)
        if self.kind not in UNITS:
            raise ValueError(f"unknown response kind {self.kind!r}")
        if self.omega_grid.shape != self.values.shape:
            raise ValueError("grid and values differ in shape")
        if self.omega_grid.size > 1 and not np.all(np.diff(self.omega_grid) > 0):
            raise ValueError("omega grid must be strictly increasing")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite response values")

    @property
    def units(self) -> str:
        return UNITS[self.kind]

    def to_csv(self, path) -> None:
        table = np.column_stack([self.omega_grid, self.values.real, self.values.imag])
        header = f"kind={self.kind} units={self.units}\nomega_rad_s,real,imag"
        np.savetxt(path, table, delimiter=",", header=header, comments="# ", fmt="%.17g")

    @classmethod
    def from_csv(cls, path) -> "FrequencyResponse":
        with open(path) as fh:
            first = fh.readline()
        kind = first.split("kind=")[1].split()[0]
        table = np.loadtxt(path, delimiter=",", comments="#", ndmin=2)
        return cls(table[:, 0], table[:, 1] + 1j * table[:, 2], kind)


@dataclass(frozen=True)
class EffectiveModeParams:
    gamma_eff: float
    omega_eff: float
    mode_label: str
    method: str = "perturbative"

    @property
    def is_unstable(self) -> bool:
        return self.gamma_eff < 0


@dataclass(frozen=True)
class ThresholdResult:
    power: float
    bracket: tuple[float, float]
    iterations: int
    mode_label: str


def default_grid(config: SystemConfig, mode: str | None = None, points: int = 4096) -> np.ndarray:
    """Linear grid over [0.5, 1.5] omega_m, 8x denser within 10 linewidths of each resonance."""
    m = _mode(config, mode)
    grid = np.linspace(0.5 * m.omega_m, 1.5 * m.omega_m, points)
    step = grid[1] - grid[0]
    extra = []
    for other in config.mechanics:
        lo = max(grid[0], other.omega_m - 10 * other.gamma_m)
        hi = min(grid[-1], other.omega_m + 10 * other.gamma_m)
        if hi > lo:
            extra.append(np.arange(lo, hi, step / 8.0))
    return np.unique(np.concatenate([grid, *extra]))


def _mode(config: SystemConfig, label: str | None) -> MechanicalMode:
    return config.mechanics[0] if label is None else config.mode(label)


def _steady(config: SystemConfig, steady: SteadyState | None) -> SteadyState:
    return select_branch(config) if steady is None else steady


def bare_susceptibility(mode: MechanicalMode, omega_grid) -> FrequencyResponse:
    w = np.asarray(omega_grid, float)
    return FrequencyResponse(w, _chi0_inv(mode, w) ** -1, "susceptibility")


def _chi0_inv(mode: MechanicalMode, w):
    return mode.mass * (mode.omega_m**2 - w**2 + 1j * mode.gamma_m * w)


@dataclass(frozen=True)
class FieldCoefficients:
    """``da(w) = input * da_in(w) + sum_j displacement[j] * dx_j(w)``.

    ``conj_displacement[j]`` is the coefficient of ``dx_j(w)`` in
    ``[da(-w)]^*``.
    """

    input: np.ndarray
    displacement: np.ndarray
    conj_displacement: np.ndarray


def field_response(config: SystemConfig, steady: SteadyState | None, omega) -> FieldCoefficients:
    config = validate(config)
    st = _steady(config, steady)
    o = config.optical
    w = np.asarray(omega, dtype=complex)
    g = np.array([m.coupling_g for m in config.mechanics])[:, None]
    denom = o.gamma - 1j * (st.delta_eff - w)
    denom_conj = o.gamma + 1j * (st.delta_eff + w)
    c_in = math.sqrt(2 * o.gamma_in) / denom
    c_x = 1j * g * st.a_bar / denom
    c_xc = -1j * g * np.conj(st.a_bar) / denom_conj
    return FieldCoefficients(c_in, c_x, c_xc)


def loop_terms(config: SystemConfig, steady: SteadyState | None, omega, mode: str | None = None):
    """Radiation-pressure stiffness ``K_rad(w)`` and transduction ``T(w)`` for one mode.

    Both are composed from :func:`field_response`, the input-output
    relation ``a_out = a_in - sqrt(2 gamma_in) a`` and the photocurrent
    ``i = a_out^* a_out``.
    """
    st = _steady(config, steady)
    j = 0 if mode is None else config.mode_index(mode)
    coeffs = field_response(config, st, omega)
    c_x, c_xc = coeffs.displacement[j], coeffs.conj_displacement[j]
    g = config.mechanics[j].coupling_g
    # F_rad = hbar g (a* da + a [da(-w)]*)
    k_rad = HBAR * g * (np.conj(st.a_bar) * c_x + st.a_bar * c_xc)
    a_out, _ = transmitted_mean_field(st, config)
    s = math.sqrt(2 * config.optical.gamma_in)
    # di = a_out* da_out + a_out [da_out(-w)]*, da_out = -s da
    transduction = -s * (np.conj(a_out) * c_x + a_out * c_xc)
    return k_rad, transduction


def _gain_values(gain, w) -> np.ndarray:
    if isinstance(gain, FrequencyResponse):
        return gain.values
    if callable(gain):
        return np.asarray(gain(w), dtype=complex)
    return np.broadcast_to(np.asarray(gain, dtype=complex), np.shape(w))


def self_energy(config, steady, gain, omega, mode: str | None = None):
    """Additive change of the inverse susceptibility, ``-K_rad - G T``."""
    k_rad, transduction = loop_terms(config, steady, omega, mode)
    return -k_rad - _gain_values(gain, np.asarray(omega)) * transduction


def transduction_transfer(config: SystemConfig, steady: SteadyState | None, omega_grid,
                          mode: str | None = None) -> FrequencyResponse:
    config = validate(config)
    w = np.asarray(omega_grid, float)
    _, t = loop_terms(config, steady, w, mode)
    return FrequencyResponse(w, t, "transduction")


def modified_susceptibility(config: SystemConfig, steady: SteadyState | None, gain: Gain,
                            omega_grid, mode: str | None = None) -> FrequencyResponse:
    config = validate(config)
    w = np.asarray(omega_grid, float)
    m = _mode(config, mode)
    inv = _chi0_inv(m, w) + self_energy(config, steady, gain, w, mode)
    scale = np.abs(_chi0_inv(m, w))
    bad = np.abs(inv) <= 1e-14 * scale
    if np.any(bad):
        raise SingularResponseError(f"inverse susceptibility vanishes at omega={w[bad][0]:.9g} rad/s")
    return FrequencyResponse(w, 1.0 / inv, "susceptibility")


def printed_critical_gain(config: SystemConfig, omega, mode: str | None = None):
    """The closed form ``hbar g / (2 gamma_0 - i w)`` as commonly quoted."""
    m = _mode(config, mode)
    return HBAR * m.coupling_g / (2 * config.optical.gamma_0 - 1j * np.asarray(omega))


def _reference_steady(config: SystemConfig) -> tuple[SystemConfig, SteadyState]:
    """An operating point with nonzero transduction, for the gain null.

    The null of the self-energy does not depend on detuning, coupling rate
    or power, so any point with ``T != 0`` gives the same answer.
    """
    o = config.optical
    probe = config.with_optical(
        gamma_in=o.gamma_in if o.gamma_in > 0 else o.gamma_0,
        delta_0=o.delta_0 if o.delta_0 != 0 else o.gamma_0,
    )
    if probe.drive.power <= 0:
        probe = probe.with_power(1e-6)
    return probe, select_branch(probe, 0)


def critical_gain(config: SystemConfig, omega_grid, mode: str | None = None,
                  steady: SteadyState | None = None) -> FrequencyResponse:
    """Gain that nulls the self-energy at every grid frequency.

    The comparison with :func:`printed_critical_gain` is attached in
    ``meta`` (``printed`` and ``ratio_to_printed``).
    """
    config = validate(config)
    w = np.asarray(omega_grid, float)
    cfg, st = config, _steady(config, steady)
    k_rad, t = loop_terms(cfg, st, w, mode)
    if np.any(np.abs(t) == 0) or st.n_bar == 0:
        cfg, st = _reference_steady(config)
        k_rad, t = loop_terms(cfg, st, w, mode)
    g_crit = -k_rad / t
    printed = printed_critical_gain(config, w, mode)
    return FrequencyResponse(
        w, g_crit, "gain",
        meta={"printed": printed, "ratio_to_printed": g_crit / printed},
    )


def critical_gain_at(config: SystemConfig, omega: float, mode: str | None = None) -> complex:
    return complex(critical_gain(config, np.array([omega]), mode).values[0])


def _find_pole(config, steady, gain, mode: MechanicalMode, label) -> complex:
    def f(w):
        sigma = self_energy(config, steady, gain, np.atleast_1d(w), label)[0]
        return complex(_chi0_inv(mode, w) + sigma)

    w0 = complex(mode.omega_m, 0.5 * mode.gamma_m)
    w1 = w0 * (1 + 1e-7)
    f0, f1 = f(w0), f(w1)
    for _ in range(200):
        if f1 == f0:
            break
        w2 = w1 - f1 * (w1 - w0) / (f1 - f0)
        w0, f0 = w1, f1
        w1, f1 = w2, f(w2)
        if abs(w1 - w0) <= 1e-15 * abs(w1):
            return complex(w1)
    if abs(f1) > 1e-9 * abs(_chi0_inv(mode, mode.omega_m)):
        raise SingularResponseError("pole search did not converge")
    return complex(w1)


def effective_params(config: SystemConfig, steady: SteadyState | None, gain: Gain,
                     mode: str | None = None, exact: bool | None = None) -> EffectiveModeParams:
    """Effective damping and frequency of one mode.

    First order in the self-energy: ``gamma_eff = Gamma_0 + Im S / (m w_m)``,
    ``omega_eff = w_m + Re S / (2 m w_m)``.  When ``|S chi_0| > 0.1`` at
    resonance a :class:`PerturbativeWarning` is emitted and the complex pole
    of the full susceptibility is used instead.  ``exact`` forces either path.
    """
    config = validate(config)
    m = _mode(config, mode)
    label = m.label
    st = _steady(config, steady)
    sigma = complex(self_energy(config, st, gain, np.array([m.omega_m]), label)[0])
    if m.quality_factor <= 10:
        warnings.warn(f"mode {label} has Q <= 10", PerturbativeWarning, stacklevel=2)
    strength = abs(sigma) / abs(_chi0_inv(m, m.omega_m))
    if exact is None:
        exact = strength > 0.1
        if exact:
            warnings.warn(
                f"|S chi_0| = {strength:.3g} > 0.1 for mode {label}; using exact pole",
                PerturbativeWarning, stacklevel=2,
            )
    if not exact:
        return EffectiveModeParams(
            m.gamma_m + sigma.imag / (m.mass * m.omega_m),
            m.omega_m + sigma.real / (2 * m.mass * m.omega_m),
            label,
        )
    if callable(gain) or isinstance(gain, (FrequencyResponse, np.ndarray)):
        gain = complex(_gain_values(gain, np.array([m.omega_m]))[0])
    pole = _find_pole(config, st, gain, m, label)
    return EffectiveModeParams(2.0 * pole.imag, pole.real, label, "pole")


def gamma_eff_at_power(config: SystemConfig, power: float, mode: str | None = None,
                       gain: Gain = 0.0) -> float:
    cfg = config.with_power(power)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", PerturbativeWarning)
        return effective_params(cfg, select_branch(cfg, 0), gain, mode).gamma_eff


def instability_threshold(config: SystemConfig, mode: str | None = None, gain: Gain = 0.0,
                          ceiling: float = 10e-3, rel_tol: float = 1e-4,
                          max_iter: int = 60) -> ThresholdResult:
    """Drive power at which ``gamma_eff`` of ``mode`` crosses zero (bisection)."""
    config = validate(config)
    label = _mode(config, mode).label
    if gamma_eff_at_power(config, ceiling, label, gain) > 0:
        raise NoThresholdError(f"mode {label} stays damped up to {ceiling:g} W")
    lo, hi = 0.0, ceiling
    it = 0
    while it < max_iter and (hi - lo) > rel_tol * hi:
        mid = 0.5 * (lo + hi)
        if gamma_eff_at_power(config, mid, label, gain) > 0:
            lo = mid
        else:
            hi = mid
        it += 1
    return ThresholdResult(0.5 * (lo + hi), (lo, hi), it, label)


def coupling_for_threshold(config: SystemConfig, mode: str, target_power: float) -> float:
    """Coupling ``g`` (rad/s/m) that puts the instability threshold of ``mode`` at ``target_power``."""
    config = validate(config)

    def excess(log_g):
        cfg = config.with_mode(mode, coupling_g=math.exp(log_g))
        return gamma_eff_at_power(cfg, target_power, mode)

    return math.exp(brentq(excess, math.log(1e15), math.log(1e23), xtol=1e-12, rtol=1e-12))
