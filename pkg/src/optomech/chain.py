"""Detection and electrical feedback path.

The chain runs sample-synchronously with the integrator at rate ``1/dt``::

    photocurrent -> delay line -> bandpass cascade -> allpass phase shifter
                 -> sign -> gain -> actuation force

Each bandpass section is a second-order peaking filter (unit gain and zero
phase at its center).  The first-order allpass is solved so the total
chain phase at ``center_freq``, delay included, equals ``phase_deg``; a
sign flip extends the allpass range of (-180, 0] degrees to a full turn.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numba
import numpy as np
from scipy import signal

from .model import FeedbackChainConfig, SystemConfig, validate
from .response import FrequencyResponse, critical_gain_at


class UnreachableGainError(ValueError):
    pass


class AliasingWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class ChainCoefficients:
    sos: np.ndarray  # (sections, 5): b0, b1, b2, a1, a2
    allpass_c: float  # 1.0 means bypass
    scale: float  # sign * gain_mag * cascade normalisation
    delay: int
    dt: float
    enabled: bool

    @property
    def is_zero(self) -> bool:
        return (not self.enabled) or self.scale == 0.0


def _section(config: FeedbackChainConfig, dt: float) -> np.ndarray:
    fs = 1.0 / dt
    f0 = config.center_freq / (2 * math.pi)
    bw = config.bandwidth / (2 * math.pi)
    if not 0 < f0 < 0.5 * fs:
        raise ValueError("feedback center frequency must lie below Nyquist")
    b, a = signal.iirpeak(f0, f0 / bw, fs=fs)
    return np.array([b[0], b[1], b[2], a[1], a[2]])


def _sos_response(sos: np.ndarray, theta) -> np.ndarray:
    z1 = np.exp(-1j * np.asarray(theta, float))
    h = np.ones_like(z1)
    for b0, b1, b2, a1, a2 in sos:
        h = h * (b0 + b1 * z1 + b2 * z1**2) / (1 + a1 * z1 + a2 * z1**2)
    return h


def _allpass_response(c: float, theta) -> np.ndarray:
    z1 = np.exp(-1j * np.asarray(theta, float))
    if c == 1.0:
        return np.ones_like(z1)
    return (c + z1) / (1 + c * z1)


def _allpass_for_phase(phase: float, theta: float) -> float:
    """Coefficient giving allpass phase ``phase`` (in (-pi, 0]) at normalised ``theta``."""
    if phase >= -1e-15:
        return 1.0
    t = math.tan(0.5 * (phase + theta))
    return t / (math.sin(theta) - t * math.cos(theta))


def design(config: FeedbackChainConfig, dt: float) -> ChainCoefficients:
    """Discrete-time realisation of ``config`` at sample interval ``dt``."""
    sec = _section(config, dt)
    sos = np.tile(sec, (config.sections, 1))
    theta_c = config.center_freq * dt
    h0 = complex(_sos_response(sos, theta_c)) * complex(np.exp(-1j * theta_c * config.delay_samples))
    need = math.radians(config.phase_deg) - math.atan2(h0.imag, h0.real)
    need = -((-need) % (2 * math.pi))  # wrap into (-2 pi, 0]
    sign = 1.0
    if need <= -math.pi:
        sign, need = -1.0, need + math.pi
    c = _allpass_for_phase(need, theta_c)
    scale = sign * config.gain_mag / abs(h0)
    return ChainCoefficients(sos, float(c), float(scale), int(config.delay_samples), dt, config.enabled)


def chain_frequency_response(config: FeedbackChainConfig, omega_grid, dt: float) -> FrequencyResponse:
    """Exact response of the discrete chain, as a function of angular frequency."""
    w = np.asarray(omega_grid, float)
    if np.any(w > 2 * math.pi * 0.4 / dt):
        warnings.warn("grid extends beyond 0.4 of the chain sample rate", AliasingWarning, stacklevel=2)
    co = design(config, dt)
    theta = w * dt
    h = co.scale * np.exp(-1j * theta * co.delay) * _sos_response(co.sos, theta) * _allpass_response(co.allpass_c, theta)
    if not config.enabled:
        h = np.zeros_like(h)
    return FrequencyResponse(w, h, "gain")


def tune_to_critical(config: SystemConfig, dt: float, omega_target: float | None = None,
                     mode: str | None = None, gain_ceiling: float = 1e-18) -> FeedbackChainConfig:
    """Chain settings whose response at ``omega_target`` equals the critical gain there.

    Only a single frequency is matched; away from it the chain follows its
    own bandpass shape rather than the critical gain's frequency dependence.
    """
    config = validate(config)
    m = config.mechanics[0] if mode is None else config.mode(mode)
    w_t = m.omega_m if omega_target is None else omega_target
    fb = config.feedback
    half = 0.5 * fb.bandwidth
    if abs(w_t - fb.center_freq) > half:
        raise ValueError("target frequency outside the chain passband")
    target = critical_gain_at(config, w_t, m.label)
    if abs(target) > gain_ceiling:
        raise UnreachableGainError(f"|G_crit| = {abs(target):.3g} N s exceeds ceiling {gain_ceiling:.3g}")
    tuned = replace(fb, enabled=True, gain_mag=abs(target), phase_deg=math.degrees(np.angle(target)))
    for _ in range(50):
        h = complex(chain_frequency_response(tuned, np.array([w_t]), dt).values[0])
        ratio = target / h
        if abs(ratio - 1) < 1e-13:
            break
        tuned = replace(
            tuned,
            gain_mag=tuned.gain_mag * abs(ratio),
            phase_deg=tuned.phase_deg + math.degrees(np.angle(ratio)),
        )
    if tuned.gain_mag > gain_ceiling:
        raise UnreachableGainError(f"required gain {tuned.gain_mag:.3g} N s exceeds ceiling")
    return tuned


def photocurrent_sample(a: complex, config: SystemConfig, rng: np.random.Generator | None,
                        dt: float) -> float:
    """Photocurrent (photons/s) averaged over one sample of length ``dt``.

    The shot term is white with one-sided PSD ``2 <i>``; pass ``rng=None``
    to switch it off.
    """
    a_in = math.sqrt(config.photon_flux)
    a_out = a_in - math.sqrt(2 * config.optical.gamma_in) * a
    mean = abs(a_out) ** 2
    if rng is None:
        return mean
    return mean + math.sqrt(mean / dt) * rng.standard_normal()


@numba.njit(cache=True)
def chain_step(x, sos, zi, ap_c, ap_state, delay_buf, delay_pos, scale):
    """One sample through the chain; returns (force, new delay position)."""
    y = delay_buf[delay_pos]
    delay_buf[delay_pos] = x
    delay_pos += 1
    if delay_pos == delay_buf.shape[0]:
        delay_pos = 0
    for k in range(sos.shape[0]):
        out = sos[k, 0] * y + zi[k, 0]
        zi[k, 0] = sos[k, 1] * y - sos[k, 3] * out + zi[k, 1]
        zi[k, 1] = sos[k, 2] * y - sos[k, 4] * out
        y = out
    if ap_c != 1.0:
        out = ap_c * y + ap_state[0] - ap_c * ap_state[1]
        ap_state[0] = y
        ap_state[1] = out
        y = out
    return scale * y, delay_pos


@numba.njit(cache=True)
def _run_series(series, sos, zi, ap_c, ap_state, delay_buf, delay_pos, scale):
    out = np.empty_like(series)
    for n in range(series.shape[0]):
        out[n], delay_pos = chain_step(series[n], sos, zi, ap_c, ap_state, delay_buf, delay_pos, scale)
    return out, delay_pos


class ChainState:
    """Mutable filter, allpass and delay-line state for one feedback chain."""

    def __init__(self, coeffs: ChainCoefficients):
        self.coeffs = coeffs
        self.zi = np.zeros((coeffs.sos.shape[0], 2))
        self.ap_state = np.zeros(2)
        self.delay_buf = np.zeros(coeffs.delay)
        self.delay_pos = 0

    @classmethod
    def from_config(cls, config: FeedbackChainConfig, dt: float) -> "ChainState":
        return cls(design(config, dt))

    def reset(self) -> None:
        self.zi[:] = 0.0
        self.ap_state[:] = 0.0
        self.delay_buf[:] = 0.0
        self.delay_pos = 0

    @property
    def scale(self) -> float:
        return 0.0 if self.coeffs.is_zero else self.coeffs.scale

    def process_sample(self, i_fluctuation: float) -> float:
        c = self.coeffs
        force, self.delay_pos = chain_step(
            float(i_fluctuation), c.sos, self.zi, c.allpass_c, self.ap_state,
            self.delay_buf, self.delay_pos, self.scale,
        )
        return force

    def process(self, series) -> np.ndarray:
        c = self.coeffs
        out, self.delay_pos = _run_series(
            np.ascontiguousarray(series, dtype=float), c.sos, self.zi, c.allpass_c,
            self.ap_state, self.delay_buf, self.delay_pos, self.scale,
        )
        return out


def process_sample(state: ChainState, i_fluctuation: float) -> float:
    return state.process_sample(i_fluctuation)


def is_stable(coeffs: ChainCoefficients) -> bool:
    """All filter poles strictly inside the unit circle."""
    for _, _, _, a1, a2 in coeffs.sos:
        if np.any(np.abs(np.roots([1.0, a1, a2])) >= 1.0):
            return False
    return abs(coeffs.allpass_c) < 1.0 or coeffs.allpass_c == 1.0
