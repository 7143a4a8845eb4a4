"""Time-domain integration of the nonlinear stochastic equations of motion.

State: positions and velocities of every mechanical mode plus the complex
intracavity amplitude.  The deterministic drift is advanced with classical
RK4 and the thermal force is added to the velocities as an Euler-Maruyama
increment after each step.  The photocurrent, including shot noise, is
formed once per step and drives the feedback chain, whose output force is
held constant over the following step.

Noise comes from two generators spawned from the plan seed: one for the
thermal forces (all modes, drawn in mode order) and one for shot noise.
With ``brownian_refine = k`` every step consumes ``k`` draws per stream and
uses their normalised sum, so a run at ``dt`` and ``k = 2`` sees the same
Brownian path as a run at ``dt / 2`` and ``k = 1``.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numba
import numpy as np
from scipy import signal, stats

from . import chain as chain_mod
from .model import HBAR, K_B, SystemConfig, thermal_force_std, validate
from .steady_state import select_branch, transmitted_mean_field

# reassociation and FMA only; NaN/Inf semantics kept for the blow-up guard
_FAST = {"contract", "reassoc", "arcp"}


class PlanError(ValueError):
    pass


class BlowUpError(RuntimeError):
    pass


class FitQualityError(RuntimeError):
    pass


class NotSaturatedError(RuntimeError):
    pass


@dataclass(frozen=True)
class SimPlan:
    dt: float
    duration: float
    seed: int = 0
    record_decimation: int = 1
    feedback_enabled: bool | None = None  # None: follow config.feedback.enabled
    transient_skip: float = 0.0
    shot_noise: bool = True
    thermal_init: bool = True
    brownian_refine: int = 1
    initial_offsets: tuple[tuple[str, float], ...] = ()
    x_ceiling: float = 1e-6
    ref_tone_amplitude: float = 0.0  # detuning modulation depth, rad/s
    ref_tone_omega: float = 0.0
    force_tone: tuple[str, float, float] | None = None  # (label, amplitude N, omega)
    branch: int | None = None

    @property
    def n_steps(self) -> int:
        return int(round(self.duration / self.dt))

    @property
    def record_dt(self) -> float:
        return self.dt * self.record_decimation


def max_dt(config: SystemConfig) -> float:
    """Largest step allowed by the stability guard."""
    w_max = max(m.omega_m for m in config.mechanics)
    return 0.02 * min(2 * math.pi / w_max, 1.0 / config.optical.gamma)


def plan_for(config: SystemConfig, duration: float, record_rate: float = 125e6, **kw) -> SimPlan:
    """Plan at the largest allowed step, decimated to roughly ``record_rate`` samples/s."""
    dt_guard = max_dt(config)
    dec = max(1, int(math.ceil(1.0 / (record_rate * dt_guard))))
    dt = 1.0 / (record_rate * dec)
    if "dt" in kw:
        dt = kw.pop("dt")
    dec = kw.pop("record_decimation", dec)
    return SimPlan(dt=dt, duration=duration, record_decimation=dec, **kw)


def check_plan(config: SystemConfig, plan: SimPlan) -> None:
    problems = []
    w_max = max(m.omega_m for m in config.mechanics)
    w_min = min(m.omega_m for m in config.mechanics)
    if not plan.dt > 0:
        problems.append("dt > 0")
    elif plan.dt > max_dt(config) * (1 + 1e-9):
        problems.append(f"dt <= {max_dt(config):.4g} s (stability guard)")
    if plan.duration < 100 * 2 * math.pi / w_min:
        problems.append("duration >= 100 periods of the slowest mode")
    if plan.record_decimation < 1:
        problems.append("record_decimation >= 1")
    elif 1.0 / plan.record_dt < 4 * w_max / (2 * math.pi):
        problems.append("record rate >= 4x the highest mechanical frequency")
    if plan.brownian_refine < 1:
        problems.append("brownian_refine >= 1")
    if not 0 <= plan.transient_skip < plan.duration:
        problems.append("0 <= transient_skip < duration")
    if problems:
        raise PlanError("invalid SimPlan: " + "; ".join(problems))


@dataclass
class Trajectory:
    t0: float
    dt_record: float
    labels: tuple[str, ...]
    x: np.ndarray  # (modes, N) m
    v: np.ndarray  # (modes, N) m/s
    a: np.ndarray  # (N,) complex sqrt(photons)
    i: np.ndarray  # (N,) photons/s, boxcar mean over each record interval
    f_fb: np.ndarray  # (N,) N
    seed: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        n = self.a.shape[0]
        for name in ("i", "f_fb"):
            if getattr(self, name).shape != (n,):
                raise ValueError(f"{name} length differs")
        if self.x.shape != (len(self.labels), n) or self.v.shape != self.x.shape:
            raise ValueError("position/velocity shape mismatch")

    def __len__(self) -> int:
        return self.a.shape[0]

    @property
    def time(self) -> np.ndarray:
        return self.t0 + self.dt_record * np.arange(len(self))

    @property
    def fs(self) -> float:
        return 1.0 / self.dt_record

    def index(self, label: str) -> int:
        return self.labels.index(label)

    def position(self, label: str) -> np.ndarray:
        return self.x[self.index(label)]

    def displacement(self, label: str) -> np.ndarray:
        """Position relative to the static mean-field displacement."""
        j = self.index(label)
        return self.x[j] - self.meta["x_bar"][j]

    def photon_number(self) -> np.ndarray:
        return np.abs(self.a) ** 2

    def window(self, t_start: float, t_stop: float | None = None) -> slice:
        lo = max(0, int(math.ceil((t_start - self.t0) / self.dt_record)))
        hi = len(self) if t_stop is None else min(len(self), int((t_stop - self.t0) / self.dt_record))
        return slice(lo, hi)

    def sliced(self, sl: slice) -> "Trajectory":
        """Records ``sl`` as a new trajectory sharing the same metadata."""
        idx = range(len(self))[sl]
        if idx.step != 1 or len(idx) == 0:
            raise ValueError("slice must be contiguous and non-empty")
        return Trajectory(self.t0 + idx.start * self.dt_record, self.dt_record, self.labels,
                          self.x[:, sl], self.v[:, sl], self.a[sl], self.i[sl], self.f_fb[sl],
                          self.seed, self.meta)

    def photocurrent_response(self, freq_hz) -> np.ndarray:
        """Magnitude response of the boxcar photocurrent recorder."""
        d = self.meta["decimation"]
        x = np.pi * np.asarray(freq_hz, float) * self.meta["dt"]
        with np.errstate(invalid="ignore", divide="ignore"):
            r = np.sin(d * x) / (d * np.sin(x))
        return np.where(x == 0, 1.0, np.abs(r))

    # -- export -------------------------------------------------------------
    def _columns(self):
        cols = {}
        for j, lab in enumerate(self.labels):
            cols[f"x_{lab}"] = ("m", self.x[j])
            cols[f"v_{lab}"] = ("m/s", self.v[j])
        cols["a_re"] = ("sqrt(photons)", self.a.real)
        cols["a_im"] = ("sqrt(photons)", self.a.imag)
        cols["i"] = ("photons/s", self.i)
        cols["f_fb"] = ("N", self.f_fb)
        return cols

    def save(self, path) -> tuple[Path, Path]:
        """Binary little-endian float64 columns plus a plain-text header."""
        path = Path(path)
        cols = self._columns()
        hdr = path.with_suffix(".hdr")
        binp = path.with_suffix(".bin")
        data = np.column_stack([c[1] for c in cols.values()]).astype("<f8")
        binp.write_bytes(data.tobytes())
        header = {
            "fields": list(cols), "units": [c[0] for c in cols.values()],
            "count": len(self), "t0": self.t0, "dt_record": self.dt_record,
            "seed": self.seed, "labels": list(self.labels),
            "meta": _jsonable(self.meta),
        }
        hdr.write_text("\n".join(f"{k}: {json.dumps(v)}" for k, v in header.items()) + "\n")
        return hdr, binp

    @classmethod
    def load(cls, path) -> "Trajectory":
        path = Path(path)
        header = {}
        for line in path.with_suffix(".hdr").read_text().splitlines():
            k, v = line.split(": ", 1)
            header[k] = json.loads(v)
        nf = len(header["fields"])
        data = np.frombuffer(path.with_suffix(".bin").read_bytes(), dtype="<f8").reshape(-1, nf)
        col = {name: data[:, k].copy() for k, name in enumerate(header["fields"])}
        labels = tuple(header["labels"])
        return cls(
            header["t0"], header["dt_record"], labels,
            np.array([col[f"x_{l}"] for l in labels]), np.array([col[f"v_{l}"] for l in labels]),
            col["a_re"] + 1j * col["a_im"], col["i"], col["f_fb"], header["seed"], header["meta"],
        )

    def to_csv(self, path) -> None:
        cols = self._columns()
        table = np.column_stack([self.time] + [c[1] for c in cols.values()])
        names = ["t"] + list(cols)
        units = ["s"] + [c[0] for c in cols.values()]
        header = f"seed={self.seed} dt_record={self.dt_record!r}\n" + ",".join(
            f"{n}[{u}]" for n, u in zip(names, units))
        np.savetxt(path, table, delimiter=",", header=header, comments="# ", fmt="%.17g")

    def checksum(self) -> str:
        h = hashlib.sha256()
        for arr in (self.x, self.v, self.a, self.i, self.f_fb):
            h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    return obj


# -- kernel -------------------------------------------------------------------

@numba.njit(cache=True, inline="always", fastmath=_FAST, error_model="numpy")
def _deriv(t, x, v, a, p_g, p_w2, p_gam, p_inv_m, p_fd, p_wd, gamma, delta0, tone_amp,
           tone_w, drive_term, f_fb, dx, dv):
    det = delta0
    if tone_amp != 0.0:
        det += tone_amp * math.cos(tone_w * t)
    for j in range(x.shape[0]):
        det += p_g[j] * x[j]
    n = a.real * a.real + a.imag * a.imag
    da = -(gamma - 1j * det) * a + drive_term
    for j in range(x.shape[0]):
        force = HBAR * p_g[j] * n + f_fb
        if p_fd[j] != 0.0:
            force += p_fd[j] * math.cos(p_wd[j] * t)
        dx[j] = v[j]
        dv[j] = -p_gam[j] * v[j] - p_w2[j] * x[j] + force * p_inv_m[j]
    return da


@numba.njit(cache=True, fastmath=_FAST, error_model="numpy")
def _kernel(n_steps, dt, x, v, a0, p_g, p_w2, p_gam, p_inv_m, p_fth, p_fd, p_wd,
            gamma, delta0, s_in, a_in, tone_amp, tone_w,
            rng_th, rng_shot, refine, shot_on, i_offset,
            sos, zi, ap_c, ap_state, dbuf, scale,
            skip_steps, decim, rec_x, rec_v, rec_a, rec_i, rec_f, x_ceiling):
    nm = x.shape[0]
    a = a0
    drive_term = s_in * a_in
    k1x = np.empty(nm); k1v = np.empty(nm); k2x = np.empty(nm); k2v = np.empty(nm)
    k3x = np.empty(nm); k3v = np.empty(nm); k4x = np.empty(nm); k4v = np.empty(nm)
    xs = np.empty(nm); vs = np.empty(nm); xi = np.empty(nm)
    inv_sqrt_refine = 1.0 / math.sqrt(refine)
    dpos = 0
    rec_n = 0
    acc_i = 0.0
    acc_count = 0
    for step in range(n_steps):
        t = step * dt
        # photocurrent over this step, shot noise drawn every step
        ao_re = a_in - s_in * a.real
        ao_im = -s_in * a.imag
        i_mean = ao_re * ao_re + ao_im * ao_im
        shot = 0.0
        for r in range(refine):
            shot += rng_shot.standard_normal()
        i_now = i_mean
        if shot_on:
            i_now += math.sqrt(i_mean / dt) * shot * inv_sqrt_refine
        f_fb = 0.0
        if scale != 0.0:
            f_fb, dpos = chain_mod.chain_step(i_now - i_offset, sos, zi, ap_c, ap_state, dbuf, dpos, scale)

        if step >= skip_steps:
            acc_i += i_now
            acc_count += 1
            if acc_count == decim:
                for j in range(nm):
                    rec_x[j, rec_n] = x[j]
                    rec_v[j, rec_n] = v[j]
                rec_a[rec_n] = a
                rec_i[rec_n] = acc_i / decim
                rec_f[rec_n] = f_fb
                rec_n += 1
                acc_i = 0.0
                acc_count = 0

        # RK4 on the deterministic drift
        ka1 = _deriv(t, x, v, a, p_g, p_w2, p_gam, p_inv_m, p_fd, p_wd, gamma, delta0,
                     tone_amp, tone_w, drive_term, f_fb, k1x, k1v)
        for j in range(nm):
            xs[j] = x[j] + 0.5 * dt * k1x[j]
            vs[j] = v[j] + 0.5 * dt * k1v[j]
        ka2 = _deriv(t + 0.5 * dt, xs, vs, a + 0.5 * dt * ka1, p_g, p_w2, p_gam, p_inv_m, p_fd,
                     p_wd, gamma, delta0, tone_amp, tone_w, drive_term, f_fb, k2x, k2v)
        for j in range(nm):
            xs[j] = x[j] + 0.5 * dt * k2x[j]
            vs[j] = v[j] + 0.5 * dt * k2v[j]
        ka3 = _deriv(t + 0.5 * dt, xs, vs, a + 0.5 * dt * ka2, p_g, p_w2, p_gam, p_inv_m, p_fd,
                     p_wd, gamma, delta0, tone_amp, tone_w, drive_term, f_fb, k3x, k3v)
        for j in range(nm):
            xs[j] = x[j] + dt * k3x[j]
            vs[j] = v[j] + dt * k3v[j]
        ka4 = _deriv(t + dt, xs, vs, a + dt * ka3, p_g, p_w2, p_gam, p_inv_m, p_fd, p_wd,
                     gamma, delta0, tone_amp, tone_w, drive_term, f_fb, k4x, k4v)
        a = a + dt / 6.0 * (ka1 + 2.0 * ka2 + 2.0 * ka3 + ka4)
        # substep-major order so a run at dt/refine draws the same path
        for j in range(nm):
            xi[j] = 0.0
        for r in range(refine):
            for j in range(nm):
                xi[j] += rng_th.standard_normal()
        for j in range(nm):
            x[j] += dt / 6.0 * (k1x[j] + 2.0 * k2x[j] + 2.0 * k3x[j] + k4x[j])
            v[j] += dt / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j])
            v[j] += p_fth[j] * xi[j] * inv_sqrt_refine
            if not (abs(x[j]) <= x_ceiling):
                return -(step + 1), j, rec_n, a
    return 0, -1, rec_n, a


def integrate(config: SystemConfig, plan: SimPlan) -> Trajectory:
    """Run one realisation; deterministic for a fixed (config, plan)."""
    config = validate(config)
    check_plan(config, plan)
    mech = config.mechanics
    nm = len(mech)
    o = config.optical
    steady = select_branch(config, plan.branch)
    _, i_bar = transmitted_mean_field(steady, config)
    temperature = config.environment.temperature

    seeds = np.random.SeedSequence(plan.seed).spawn(3)
    rng_init, rng_th, rng_shot = (np.random.Generator(np.random.PCG64(s)) for s in seeds)

    x = np.array(steady.x_bar, dtype=float)
    v = np.zeros(nm)
    if plan.thermal_init and temperature > 0:
        for j, m in enumerate(mech):
            x[j] += math.sqrt(K_B * temperature / m.stiffness) * rng_init.standard_normal()
            v[j] += math.sqrt(K_B * temperature / m.mass) * rng_init.standard_normal()
    for label, offset in plan.initial_offsets:
        x[config.mode_index(label)] += offset

    p_fd = np.zeros(nm)
    p_wd = np.zeros(nm)
    if plan.force_tone is not None:
        label, amp, w = plan.force_tone
        p_fd[config.mode_index(label)] = amp
        p_wd[config.mode_index(label)] = w

    fb_on = config.feedback.enabled if plan.feedback_enabled is None else plan.feedback_enabled
    co = chain_mod.design(config.feedback, plan.dt)
    scale = co.scale if fb_on else 0.0
    zi = np.zeros((co.sos.shape[0], 2))
    ap_state = np.zeros(2)
    dbuf = np.zeros(co.delay)

    n_steps = plan.n_steps
    skip = int(round(plan.transient_skip / plan.dt))
    n_rec = (n_steps - skip) // plan.record_decimation
    rec_x = np.zeros((nm, n_rec))
    rec_v = np.zeros((nm, n_rec))
    rec_a = np.zeros(n_rec, dtype=complex)
    rec_i = np.zeros(n_rec)
    rec_f = np.zeros(n_rec)
    dt_sqrt = math.sqrt(plan.dt)
    p_fth = np.array([thermal_force_std(m, temperature) / m.mass * dt_sqrt for m in mech])

    status, bad_mode, rec_n, a_end = _kernel(
        n_steps, plan.dt, x, v, complex(steady.a_bar),
        np.array([m.coupling_g for m in mech]), np.array([m.omega_m**2 for m in mech]),
        np.array([m.gamma_m for m in mech]), np.array([1.0 / m.mass for m in mech]),
        p_fth, p_fd, p_wd,
        o.gamma, o.delta_0, math.sqrt(2 * o.gamma_in), math.sqrt(config.photon_flux),
        plan.ref_tone_amplitude, plan.ref_tone_omega,
        rng_th, rng_shot, plan.brownian_refine, plan.shot_noise, i_bar,
        co.sos, zi, co.allpass_c, ap_state, dbuf, scale,
        skip, plan.record_decimation, rec_x, rec_v, rec_a, rec_i, rec_f, plan.x_ceiling,
    )
    if status < 0:
        raise BlowUpError(
            f"|x| of mode {mech[bad_mode].label} exceeded {plan.x_ceiling:g} m at "
            f"t = {(-status) * plan.dt:.6g} s (x = {x[bad_mode]:.3g} m); "
            "unsaturated runaway or dt too large"
        )
    t0 = plan.dt * (skip + plan.record_decimation - 1)
    meta = {
        "dt": plan.dt, "decimation": plan.record_decimation,
        "x_bar": list(steady.x_bar), "n_bar": steady.n_bar, "i_bar": i_bar,
        "delta_eff": steady.delta_eff, "power": config.drive.power,
        "feedback": bool(fb_on and scale != 0.0), "temperature": temperature,
        "omega_m": [m.omega_m for m in mech], "gamma_m": [m.gamma_m for m in mech],
        "mass": [m.mass for m in mech], "coupling_g": [m.coupling_g for m in mech],
        "plan": _jsonable(asdict(plan)),
    }
    return Trajectory(t0, plan.record_dt, tuple(config.labels), rec_x, rec_v, rec_a, rec_i,
                      rec_f, plan.seed, meta)


# -- analysis -----------------------------------------------------------------

@dataclass(frozen=True)
class GrowthRate:
    rate: float  # amplitude growth rate, 1/s (negative = decay)
    ci: tuple[float, float]  # 95 % interval
    r_squared: float
    window: tuple[float, float]  # s


@dataclass(frozen=True)
class LimitCycleReport:
    mode_label: str
    amplitude: float
    amplitude_rel_std: float
    gamma_ss: float
    harmonic_amplitudes: tuple[float, ...]  # photocurrent, orders 1..4
    window: tuple[float, float]


def envelope(traj: Trajectory, label: str, rel_bandwidth: float = 0.2) -> np.ndarray:
    """Analytic-signal magnitude of the band-isolated displacement of one mode."""
    j = traj.index(label)
    f_m = traj.meta["omega_m"][j] / (2 * math.pi)
    nyq = 0.5 * traj.fs
    lo, hi = f_m * (1 - rel_bandwidth), min(f_m * (1 + rel_bandwidth), 0.95 * nyq)
    sos = signal.butter(2, [lo / nyq, hi / nyq], btype="band", output="sos")
    xd = traj.displacement(label)
    return np.abs(signal.hilbert(signal.sosfiltfilt(sos, xd)))


def growth_rate(traj: Trajectory, label: str, min_r2: float = 0.98) -> GrowthRate:
    """Amplitude growth rate from a log-envelope line fit over the exponential epoch.

    The window starts after 5 % of the record (filter edge).  If the
    late-time slope of the log envelope differs from the early slope by more
    than half (saturation, or decay into a noise floor), the window ends
    once the envelope comes within a factor of 3 of its late-time level;
    otherwise the whole record is used.
    """
    env = envelope(traj, label)
    n = env.size
    edge = max(1, n // 20)
    log_env = np.log(np.maximum(env, 1e-300))
    t_all = traj.time
    body = log_env[edge:n - edge]
    q = max(10, body.size // 5)
    s_early = stats.linregress(t_all[edge:edge + q], body[:q]).slope
    s_late = stats.linregress(t_all[n - edge - q:n - edge], body[-q:]).slope
    stop = n - edge
    if abs(s_late - s_early) > 0.5 * abs(s_early):
        late = np.median(body[-q:])
        if s_early > 0:
            hits = np.nonzero(body >= late - math.log(3.0))[0]
        else:
            hits = np.nonzero(body <= late + math.log(3.0))[0]
        stop = edge + (hits[0] if hits.size else body.size)
        stop = max(stop, edge + min(body.size, 50))
    t = traj.time[edge:stop]
    y = log_env[edge:stop]
    fit = stats.linregress(t, y)
    r2 = fit.rvalue**2
    if r2 < min_r2:
        raise FitQualityError(f"log-envelope fit R^2 = {r2:.4f} < {min_r2}")
    half = 1.96 * fit.stderr
    return GrowthRate(fit.slope, (fit.slope - half, fit.slope + half), r2, (t[0], t[-1]))


def mean_photon_number(traj: Trajectory, t_start: float, t_stop: float | None = None) -> float:
    return float(np.mean(traj.photon_number()[traj.window(t_start, t_stop)]))


def _saturated_window(env: np.ndarray, t: np.ndarray, f_m: float, thermal_rms: float,
                      max_rel_std: float = 0.25):
    n = env.size
    edge = max(1, n // 20)
    start = edge + int(0.5 * (n - 2 * edge))  # latter half of the record
    seg = env[start:n - edge]
    ts = t[start:n - edge]
    if seg.size < 50:
        return None
    amp = float(np.mean(seg))
    rel_std = float(np.std(seg) / amp) if amp > 0 else np.inf
    slope = stats.linregress(ts, np.log(seg)).slope
    drift_per_1000_cycles = abs(slope) * 1000.0 / f_m
    if drift_per_1000_cycles < 0.01 and rel_std < max_rel_std and amp > 10.0 * thermal_rms:
        return start, n - edge, amp, rel_std
    return None


def limit_cycle(traj: Trajectory, label: str) -> LimitCycleReport:
    """Saturated-oscillation properties of one mode.

    Requires the late half of the record to be a limit cycle: envelope
    drift under 1 % per 1000 cycles, envelope relative spread under 0.25
    (a thermal envelope has about 0.52) and amplitude above ten thermal
    rms.  Harmonic amplitudes are read from the photocurrent.
    """
    from .spectra import lorentzian_width, psd, tone_power

    j = traj.index(label)
    f_m = traj.meta["omega_m"][j] / (2 * math.pi)
    m = traj.meta["mass"][j]
    thermal_rms = math.sqrt(K_B * max(traj.meta["temperature"], 1e-30) / (m * traj.meta["omega_m"][j] ** 2))
    env = envelope(traj, label)
    found = _saturated_window(env, traj.time, f_m, thermal_rms)
    if found is None:
        raise NotSaturatedError(f"mode {label}: no saturated limit-cycle window")
    start, stop, amp, rel_std = found
    i_seg = traj.i[start:stop]
    seg_len = min(i_seg.size // 2, 1 << int(math.log2(max(i_seg.size // 4, 16))))
    spec = psd(i_seg, traj.dt_record, segment_length=seg_len, units="(photons/s)^2/Hz")
    f_peak = spec.freq[np.argmax(np.where(np.abs(spec.freq - f_m) < 0.02 * f_m, spec.psd, 0))]
    harmonics = tuple(
        math.sqrt(2.0 * tone_power(spec, k * f_peak)) if k * f_peak < spec.freq[-1] else math.nan
        for k in range(1, 5)
    )
    hi_res = psd(i_seg, traj.dt_record, segment_length=i_seg.size, window="hann",
                 units="(photons/s)^2/Hz")
    gamma_ss = 2 * math.pi * lorentzian_width(hi_res, f_peak)
    return LimitCycleReport(label, amp, rel_std, gamma_ss, harmonics,
                            (float(traj.time[start]), float(traj.time[stop - 1])))


def shot_noise_force_budget(config: SystemConfig, label: str) -> dict[str, float]:
    """One-sided force PSDs on a mode: thermal versus fed-back shot noise (N^2/Hz).

    Uses the configured loop gain, or the critical gain when none is set.
    """
    from .response import critical_gain_at

    m = config.mode(label)
    steady = select_branch(config)
    _, i_bar = transmitted_mean_field(steady, config)
    thermal = 2.0 * thermal_force_std(m, config.environment.temperature) ** 2
    g = abs(critical_gain_at(config, m.omega_m, label)) if config.feedback.gain_mag == 0 else config.feedback.gain_mag
    feedback_shot = g**2 * 2.0 * i_bar
    return {"thermal": thermal, "feedback_shot": feedback_shot, "ratio": feedback_shot / thermal}
