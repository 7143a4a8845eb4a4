"""Calibrated spectra, signal-to-noise figures and sensitivity references.

Every PSD here is one-sided and carries its units as metadata; combining
spectra with different units raises :class:`UnitMismatchError`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from scipy import optimize, signal

from .model import HBAR, MechanicalMode, SystemConfig
from .response import transduction_transfer
from .steady_state import SteadyState, select_branch


class InsufficientDataError(ValueError):
    pass


class ToneNotFoundError(RuntimeError):
    pass


class LowToneSNRWarning(RuntimeWarning):
    pass


class BandOverlapError(ValueError):
    pass


class SpanError(ValueError):
    pass


class UnitMismatchError(TypeError):
    pass


@dataclass(frozen=True)
class Spectrum:
    freq: np.ndarray  # Hz, uniform, one-sided
    psd: np.ndarray
    units: str
    rbw: float  # bin spacing, Hz
    averages: int
    calibration: str = "raw"
    enbw: float = 1.5  # equivalent noise bandwidth in bins

    def __add__(self, other: "Spectrum") -> "Spectrum":
        if self.units != other.units:
            raise UnitMismatchError(f"{self.units} + {other.units}")
        return replace(self, psd=self.psd + other.psd)

    def scaled(self, factor, units: str, calibration: str | None = None) -> "Spectrum":
        return replace(self, psd=self.psd * factor, units=units,
                       calibration=self.calibration if calibration is None else calibration)

    def band(self, lo: float, hi: float) -> np.ndarray:
        return (self.freq >= lo) & (self.freq <= hi)

    def integrate(self, lo: float = 0.0, hi: float = np.inf) -> float:
        return float(np.sum(self.psd[self.band(lo, hi)]) * self.rbw)

    def to_csv(self, path) -> None:
        header = f"units={self.units} rbw_Hz={self.rbw!r} averages={self.averages} " \
                 f"calibration={self.calibration}\nfreq_Hz,psd"
        np.savetxt(path, np.column_stack([self.freq, self.psd]), delimiter=",",
                   header=header, comments="# ", fmt="%.17g")


@dataclass(frozen=True)
class SnrReport:
    peak_freq: float
    peak_psd: float
    floor_psd: float
    snr_db: float
    sensitivity: float | None  # m/sqrt(Hz) when calibrated

    def as_record(self) -> dict[str, float]:
        return {
            "peak_freq_Hz": self.peak_freq, "peak_psd": self.peak_psd,
            "floor_psd": self.floor_psd, "snr_db": self.snr_db,
            "sensitivity_m_rtHz": math.nan if self.sensitivity is None else self.sensitivity,
        }


@dataclass(frozen=True)
class HarmonicPeak:
    order: int
    freq: float
    peak_psd: float
    floor_psd: float
    present: bool


@dataclass(frozen=True)
class ReferenceTone:
    """Known detuning modulation ``amplitude * cos(omega t)`` (rad/s, rad/s)."""

    amplitude: float
    omega: float

    @property
    def freq(self) -> float:
        return self.omega / (2 * math.pi)


def psd(series, dt: float, segment_length: int | None = None, overlap_fraction: float = 0.5,
        window: str = "hann", units: str = "raw^2/Hz", rbw: float = 10e3) -> Spectrum:
    """One-sided averaged-periodogram PSD (Welch), mean removed per segment.

    ``segment_length`` defaults to the length giving ``rbw`` bin spacing.
    A tone of amplitude A integrates to A^2/2; white noise of variance s^2
    gives a level of 2 s^2 dt.
    """
    x = np.asarray(series, dtype=float)
    if segment_length is None:
        segment_length = int(round(1.0 / (rbw * dt)))
    if x.size < 2 * segment_length and segment_length != x.size:
        raise InsufficientDataError(f"{x.size} samples < 2 x segment length {segment_length}")
    noverlap = int(round(overlap_fraction * segment_length))
    f, p = signal.welch(x, fs=1.0 / dt, window=window, nperseg=segment_length,
                        noverlap=noverlap, detrend="constant", scaling="density",
                        return_onesided=True)
    step = segment_length - noverlap
    averages = 1 + (x.size - segment_length) // max(step, 1)
    w = signal.get_window(window, segment_length)
    enbw = segment_length * np.sum(w**2) / np.sum(w) ** 2
    return Spectrum(f, p, units, float(f[1] - f[0]), int(averages), "raw", float(enbw))


def _nearest(spec: Spectrum, f: float) -> int:
    return int(np.clip(np.rint((f - spec.freq[0]) / spec.rbw), 0, spec.freq.size - 1))


def local_floor(spec: Spectrum, f: float, inner: int = 5, outer: int = 20) -> float:
    """Median PSD in two side bands ``inner..outer`` bins away from ``f``."""
    k = _nearest(spec, f)
    idx = np.r_[max(0, k - outer):max(0, k - inner), k + inner + 1:min(spec.freq.size, k + outer + 1)]
    return float(np.median(spec.psd[idx]))


def peak_near(spec: Spectrum, f: float, half_width_bins: int = 3) -> tuple[float, float]:
    k = _nearest(spec, f)
    lo, hi = max(0, k - half_width_bins), min(spec.freq.size, k + half_width_bins + 1)
    j = lo + int(np.argmax(spec.psd[lo:hi]))
    return float(spec.freq[j]), float(spec.psd[j])


def tone_power(spec: Spectrum, f: float, half_width_bins: int = 4, subtract_floor: bool = True) -> float:
    """Integrated power of a narrow line near ``f``, local floor removed."""
    f_pk, _ = peak_near(spec, f)
    k = _nearest(spec, f_pk)
    lo, hi = max(0, k - half_width_bins), min(spec.freq.size, k + half_width_bins + 1)
    total = float(np.sum(spec.psd[lo:hi]) * spec.rbw)
    if subtract_floor:
        total -= local_floor(spec, f_pk, half_width_bins + 2, 4 * half_width_bins + 8) * (hi - lo) * spec.rbw
    return total


def lorentzian_width(spec: Spectrum, f: float, span_bins: int = 12) -> float:
    """FWHM (Hz) of a Lorentzian-plus-floor fit around the peak near ``f``.

    Not deconvolved from the window: lines narrower than the resolution
    come out at roughly the window's equivalent noise bandwidth.
    """
    f_pk, p_pk = peak_near(spec, f)
    k = _nearest(spec, f_pk)
    sl = slice(max(0, k - span_bins), min(spec.freq.size, k + span_bins + 1))
    fr, pr = spec.freq[sl], spec.psd[sl]

    def model(ff, amp, f0, hw, base):
        return amp * hw**2 / ((ff - f0) ** 2 + hw**2) + base

    p0 = (p_pk, f_pk, spec.rbw, float(np.min(pr)))
    try:
        popt, _ = optimize.curve_fit(model, fr, pr, p0=p0, maxfev=20000)
    except RuntimeError:
        return math.nan
    return float(2 * abs(popt[2]))


def _transfer_shape(config: SystemConfig, steady: SteadyState, freq, mode: str, recorder=None):
    t = transduction_transfer(config, steady, 2 * np.pi * np.atleast_1d(freq), mode).values
    h = np.abs(t) ** 2
    if recorder is not None:
        h = h * np.asarray(recorder(np.atleast_1d(freq))) ** 2
    return h


def calibration_factor(photocurrent: Spectrum, config: SystemConfig, tone: ReferenceTone,
                       mode: str, min_snr_db: float = 20.0) -> float:
    """m^2 per (photons/s)^2 at the tone frequency."""
    g = config.mode(mode).coupling_g
    if g == 0:
        raise ToneNotFoundError("coupling g = 0: no displacement equivalent for the tone")
    f_pk, p_pk = peak_near(photocurrent, tone.freq)
    floor = local_floor(photocurrent, f_pk)
    snr_db = 10 * math.log10(p_pk / floor) if floor > 0 else math.inf
    if not snr_db > 6.0:
        raise ToneNotFoundError(f"reference tone at {tone.freq:.6g} Hz not resolved ({snr_db:.1f} dB)")
    if snr_db < min_snr_db:
        warnings.warn(f"reference tone SNR {snr_db:.1f} dB < {min_snr_db} dB", LowToneSNRWarning, stacklevel=2)
    measured = tone_power(photocurrent, tone.freq)
    x_equiv = tone.amplitude / g
    return 0.5 * x_equiv**2 / measured


def calibrate_displacement(photocurrent: Spectrum, config: SystemConfig, tone: ReferenceTone,
                           mode: str, steady: SteadyState | None = None, recorder=None) -> Spectrum:
    """Photocurrent PSD to displacement PSD of ``mode`` (m^2/Hz).

    The scale is fixed at the reference tone, where a detuning modulation of
    depth ``A`` is equivalent to a displacement ``A / g``; other frequencies
    follow ``|T(f)|^2`` (and the recorder response, if given) relative to
    the tone frequency.
    """
    steady = select_branch(config) if steady is None else steady
    c_ref = calibration_factor(photocurrent, config, tone, mode)
    shape = _transfer_shape(config, steady, photocurrent.freq, mode, recorder)
    shape_ref = _transfer_shape(config, steady, tone.freq, mode, recorder)[0]
    with np.errstate(divide="ignore"):
        factor = np.where(shape > 0, c_ref * shape_ref / shape, np.inf)
    factor[0] = factor[1]  # DC is meaningless for transduction
    return photocurrent.scaled(factor, "m^2/Hz", "calibrated-by-tone")


def _overlaps(a: tuple[float, float], b: tuple[float, float]) -> bool:
    return a[0] <= b[1] and b[0] <= a[1]


def snr(spectrum: Spectrum, peak_freq: float, signal_band: tuple[float, float],
        floor_band: tuple[float, float], exclude=()) -> SnrReport:
    """Peak-to-floor ratio; the floor is the median over ``floor_band``.

    ``exclude`` lists frequencies (resonances, harmonics) that must not lie
    inside the floor band.
    """
    if _overlaps(signal_band, floor_band):
        raise BandOverlapError("signal and floor bands overlap")
    for f in exclude:
        if floor_band[0] <= f <= floor_band[1]:
            raise BandOverlapError(f"floor band contains excluded frequency {f:.6g} Hz")
    sig = spectrum.band(*signal_band)
    flo = spectrum.band(*floor_band)
    if not sig.any() or not flo.any():
        raise BandOverlapError("empty band")
    k = np.argmax(np.where(sig, spectrum.psd, -np.inf))
    peak = float(spectrum.psd[k])
    floor = float(np.median(spectrum.psd[flo]))
    sens = math.sqrt(floor) if spectrum.calibration == "calibrated-by-tone" else None
    return SnrReport(float(spectrum.freq[k]), peak, floor, 10 * math.log10(peak / floor), sens)


def sql(mode: MechanicalMode) -> float:
    """Standard-quantum-limit amplitude sensitivity ``sqrt(hbar / (2 m w_m Gamma_0))`` (m/sqrt(Hz))."""
    return math.sqrt(HBAR / (2.0 * mode.mass * mode.omega_m * mode.gamma_m))


def harmonic_scan(spectrum: Spectrum, fundamental: float, max_order: int,
                  threshold_db: float = 6.0) -> list[HarmonicPeak]:
    """Peak search within 3 bins of each harmonic; present if 6 dB above the local floor."""
    if max_order * fundamental + 3 * spectrum.rbw > spectrum.freq[-1]:
        raise SpanError(f"spectrum ends at {spectrum.freq[-1]:.6g} Hz, below order {max_order}")
    out = []
    for k in range(1, max_order + 1):
        f_pk, p_pk = peak_near(spectrum, k * fundamental)
        floor = local_floor(spectrum, k * fundamental)
        out.append(HarmonicPeak(k, f_pk, p_pk, floor, p_pk > floor * 10 ** (threshold_db / 10)))
    return out


def line_present(spectrum: Spectrum, freq: float, threshold_db: float = 6.0) -> bool:
    _, p_pk = peak_near(spectrum, freq)
    return p_pk > local_floor(spectrum, freq) * 10 ** (threshold_db / 10)


def spectrogram_rows(power: float, spectrum: Spectrum):
    """Long-format rows (power, freq, psd) for power-versus-frequency colour maps."""
    return np.column_stack([np.full(spectrum.freq.size, power), spectrum.freq, spectrum.psd])
