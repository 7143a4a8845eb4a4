"""Static mean-field solution: intracavity amplitude, static displacement, detuning.

Setting the time derivatives to zero gives a cubic in the photon number
``n``::

    n * (gamma^2 + (delta_0 + kappa n)^2) = 2 gamma_in |a_in|^2,
    kappa = sum_j hbar g_j^2 / (m_j omega_j^2)

which has one or three non-negative roots.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from .model import HBAR, SystemConfig, validate


class NoConvergenceError(RuntimeError):
    pass


class AmbiguousBranchError(ValueError):
    """Several stable branches exist and no index was given."""


@dataclass(frozen=True)
class SteadyState:
    a_bar: complex
    n_bar: float
    x_bar: tuple[float, ...]
    delta_eff: float
    stable: bool

    def residual(self, config: SystemConfig) -> float:
        o = config.optical
        a_in = math.sqrt(config.photon_flux)
        return abs((o.gamma - 1j * self.delta_eff) * self.a_bar - math.sqrt(2 * o.gamma_in) * a_in)


def spring_pull(config: SystemConfig) -> float:
    """``kappa``: detuning shift per intracavity photon from static displacement."""
    return sum(HBAR * m.coupling_g**2 / m.stiffness for m in config.mechanics)


def _static_residual(n, gamma, delta_0, kappa, drive):
    return n * (gamma**2 + (delta_0 + kappa * n) ** 2) - drive


def _static_slope(n, gamma, delta_0, kappa):
    d = delta_0 + kappa * n
    return gamma**2 + d**2 + 2.0 * kappa * n * d


def _real_cubic_roots(a, b, c, d):
    """Real roots of ``a x^3 + b x^2 + c x + d`` (a != 0), closed form."""
    p_b, p_c, p_d = b / a, c / a, d / a
    shift = p_b / 3.0
    p = p_c - p_b**2 / 3.0
    q = 2.0 * p_b**3 / 27.0 - p_b * p_c / 3.0 + p_d
    disc = (q / 2.0) ** 2 + (p / 3.0) ** 3
    scale = max(abs(q / 2.0) ** 2, abs(p / 3.0) ** 3, 1e-300)
    if disc > 1e-14 * scale:
        s = math.sqrt(disc)
        u = math.copysign(abs(-q / 2.0 + s) ** (1 / 3), -q / 2.0 + s)
        v = math.copysign(abs(-q / 2.0 - s) ** (1 / 3), -q / 2.0 - s)
        return [u + v - shift]
    if p == 0.0:
        return [-shift]
    r = math.sqrt(-p / 3.0)
    arg = max(-1.0, min(1.0, (3.0 * q) / (2.0 * p) * math.sqrt(-3.0 / p)))
    phi = math.acos(arg)
    return [2.0 * r * math.cos((phi - 2.0 * math.pi * k) / 3.0) - shift for k in range(3)]


def _polish(n, gamma, delta_0, kappa, drive, tol=1e-12, max_iter=100):
    scale = max(drive, 1e-300)
    for _ in range(max_iter):
        res = _static_residual(n, gamma, delta_0, kappa, drive)
        if abs(res) <= tol * scale:
            return n, True
        slope = _static_slope(n, gamma, delta_0, kappa)
        if slope == 0.0:
            break
        step = res / slope
        n_new = n - step
        if n_new == n:
            return n, abs(res) <= 1e3 * tol * scale
        n = n_new
    return n, abs(_static_residual(n, gamma, delta_0, kappa, drive)) <= tol * scale


def _branch(config: SystemConfig, n: float, stable: bool) -> SteadyState:
    o = config.optical
    a_in = math.sqrt(config.photon_flux)
    x_bar = tuple(HBAR * m.coupling_g * n / m.stiffness for m in config.mechanics)
    delta = o.delta_0 + sum(m.coupling_g * x for m, x in zip(config.mechanics, x_bar))
    a_bar = math.sqrt(2 * o.gamma_in) * a_in / (o.gamma - 1j * delta)
    return SteadyState(complex(a_bar), float(abs(a_bar) ** 2), x_bar, float(delta), bool(stable))


def solve_mean_field(config: SystemConfig) -> list[SteadyState]:
    """All non-negative mean-field branches, sorted by photon number.

    Each branch carries a stability flag from the slope of the static
    response curve: branches where ``d residual / d n <= 0`` (the middle
    root of the bistable region) are unstable.
    """
    config = validate(config)
    o = config.optical
    kappa = spring_pull(config)
    drive = 2.0 * o.gamma_in * config.photon_flux
    gamma, d0 = o.gamma, o.delta_0
    if drive == 0.0:
        return [_branch(config, 0.0, True)]

    # Work in units of the linear-cavity photon number so the cubic is O(1).
    n_scale = drive / (gamma**2 + d0**2)
    if kappa == 0.0 or kappa * n_scale < 1e-12 * max(gamma, abs(d0)):
        candidates = [n_scale]
    else:
        k = kappa * n_scale
        candidates = [
            r * n_scale
            for r in _real_cubic_roots(k**2, 2.0 * d0 * k, gamma**2 + d0**2, -(gamma**2 + d0**2))
        ]
    roots = []
    for n0 in candidates:
        if n0 < -1e-9 * n_scale:
            continue
        n, ok = _polish(max(n0, 0.0), gamma, d0, kappa, drive)
        if not ok:
            raise NoConvergenceError(f"mean-field root near n={n0:.6g} failed residual 1e-12")
        roots.append(n)
    roots.sort()
    unique: list[float] = []
    for n in roots:
        if unique and abs(n - unique[-1]) <= 1e-9 * max(n, 1.0):
            warnings.warn("degenerate mean-field double root", RuntimeWarning, stacklevel=2)
            continue
        unique.append(n)
    return [_branch(config, n, _static_slope(n, gamma, d0, kappa) > 0) for n in unique]


def select_branch(config: SystemConfig, index: int | None = None) -> SteadyState:
    """Pick one branch; an explicit index is required when several are stable."""
    branches = solve_mean_field(config)
    if index is not None:
        return branches[index]
    stable = [b for b in branches if b.stable]
    if len(stable) > 1:
        raise AmbiguousBranchError(
            f"{len(stable)} stable mean-field branches; pass an explicit branch index"
        )
    return stable[0]


def transmitted_mean_field(steady: SteadyState, config: SystemConfig) -> tuple[complex, float]:
    """Output amplitude ``a_out = a_in - sqrt(2 gamma_in) a`` and mean photocurrent."""
    o = config.optical
    a_in = math.sqrt(config.photon_flux)
    a_out = a_in - math.sqrt(2 * o.gamma_in) * steady.a_bar
    return complex(a_out), float(abs(a_out) ** 2)


def static_curve(config: SystemConfig, n_grid: np.ndarray) -> np.ndarray:
    """Residual of the static cubic on a grid of photon numbers."""
    o = config.optical
    return _static_residual(
        np.asarray(n_grid, float), o.gamma, o.delta_0, spring_pull(config),
        2.0 * o.gamma_in * config.photon_flux,
    )
