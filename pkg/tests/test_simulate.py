import math

import numpy as np
import pytest

from optomech.model import K_B, MechanicalMode, hz_to_angular
from optomech.simulate import (
    BlowUpError, NotSaturatedError, PlanError, SimPlan, Trajectory, envelope, growth_rate,
    integrate, limit_cycle, max_dt, mean_photon_number, plan_for, shot_noise_force_budget,
)
from optomech.spectra import line_present
from optomech.steady_state import select_branch

from conftest import make_config

F_M = 14e6


def fast_mode(gamma_hz=20e3, g=1e19):
    return MechanicalMode(0.3e-9, hz_to_angular(gamma_hz), hz_to_angular(F_M), g, "m")


def test_damped_oscillator_decay_rate():
    cfg = make_config(power=0.0, temperature=0.0, modes=(fast_mode(),))
    plan = plan_for(cfg, 60e-6, shot_noise=False, thermal_init=False, initial_offsets=(("m", 1e-12),))
    gr = growth_rate(integrate(cfg, plan), "m")
    gamma = hz_to_angular(20e3)
    assert gr.rate == pytest.approx(-0.5 * gamma, rel=0.01)
    assert gr.r_squared > 0.999


def test_light_free_run_keeps_static_point():
    cfg = make_config(power=0.0, temperature=0.0, modes=(fast_mode(),))
    traj = integrate(cfg, plan_for(cfg, 10e-6, shot_noise=False, thermal_init=False))
    assert np.all(traj.x == 0) and np.all(traj.a == 0) and np.all(traj.i == 0)


def test_static_point_is_stationary_without_noise():
    cfg = make_config(power=30e-6, temperature=0.0)
    st = select_branch(cfg)
    traj = integrate(cfg, plan_for(cfg, 10e-6, shot_noise=False, thermal_init=False))
    np.testing.assert_allclose(traj.x[0], st.x_bar[0], rtol=1e-9)
    np.testing.assert_allclose(np.abs(traj.a) ** 2, st.n_bar, rtol=1e-9)
    assert mean_photon_number(traj, 0.0) == pytest.approx(st.n_bar, rel=1e-9)


def test_same_seed_same_trajectory():
    cfg = make_config(power=60e-6, modes=(fast_mode(),))
    plan = plan_for(cfg, 10e-6, seed=5)
    a, b = integrate(cfg, plan), integrate(cfg, plan)
    assert a.checksum() == b.checksum()
    c = integrate(cfg, plan_for(cfg, 10e-6, seed=6))
    assert c.checksum() != a.checksum()


def test_blow_up_is_reported():
    cfg = make_config(power=0.0, temperature=0.0, modes=(fast_mode(),))
    plan = plan_for(cfg, 10e-6, thermal_init=False, initial_offsets=(("m", 1e-9),), x_ceiling=1e-10)
    with pytest.raises(BlowUpError, match="mode m"):
        integrate(cfg, plan)


@pytest.mark.parametrize("change, text", [
    (dict(dt=1e-9), "stability guard"),
    (dict(duration=1e-7), "100 periods"),
    (dict(record_decimation=1000), "record rate"),
    (dict(brownian_refine=0), "brownian_refine"),
    (dict(transient_skip=1.0), "transient_skip"),
])
def test_plan_checks(change, text):
    cfg = make_config(modes=(fast_mode(),))
    base = plan_for(cfg, 10e-6)
    fields = dict(dt=base.dt, duration=base.duration, record_decimation=base.record_decimation)
    fields.update(change)
    with pytest.raises(PlanError, match=text):
        integrate(cfg, SimPlan(**fields))


def test_plan_for_targets_record_rate():
    cfg = make_config(modes=(fast_mode(),))
    plan = plan_for(cfg, 1e-3)
    assert plan.dt <= max_dt(cfg)
    assert 1 / plan.record_dt == pytest.approx(125e6, rel=1e-12)


def test_save_load_round_trip(tmp_path):
    cfg = make_config(power=60e-6, modes=(fast_mode(),))
    traj = integrate(cfg, plan_for(cfg, 10e-6, seed=3))
    traj.save(tmp_path / "run")
    back = Trajectory.load(tmp_path / "run")
    assert back.checksum() == traj.checksum()
    assert back.labels == traj.labels and back.meta["n_bar"] == traj.meta["n_bar"]
    assert "units" in (tmp_path / "run.hdr").read_text()
    traj.to_csv(tmp_path / "run.csv")
    table = np.loadtxt(tmp_path / "run.csv", delimiter=",")
    assert table.shape == (len(traj), 7)
    np.testing.assert_array_equal(table[:, 1], traj.x[0])


def test_slicing_keeps_time_axis():
    cfg = make_config(power=60e-6, modes=(fast_mode(),))
    traj = integrate(cfg, plan_for(cfg, 10e-6))
    part = traj.sliced(traj.window(4e-6))
    assert part.time[0] == pytest.approx(traj.time[traj.window(4e-6).start])
    np.testing.assert_array_equal(part.i, traj.i[traj.window(4e-6)])


def test_thermal_equipartition_short_run():
    mode = MechanicalMode(0.3e-9, hz_to_angular(200e3), hz_to_angular(F_M), 0.0, "m")
    cfg = make_config(power=0.0, modes=(mode,))
    traj = integrate(cfg, plan_for(cfg, 2e-3, seed=9))
    expect = K_B * 300.0 / mode.stiffness
    assert np.var(traj.x[0]) == pytest.approx(expect, rel=0.1)
    assert np.var(traj.v[0]) == pytest.approx(K_B * 300.0 / mode.mass, rel=0.1)


def test_thermal_run_is_not_a_limit_cycle():
    cfg = make_config(power=0.0, modes=(fast_mode(200e3),))
    traj = integrate(cfg, plan_for(cfg, 0.5e-3, seed=4))
    with pytest.raises(NotSaturatedError):
        limit_cycle(traj, "m")


def _lockin(series, t, w):
    return 2 * abs(np.mean(series * np.exp(-1j * w * t)))


def test_second_harmonic_grows_quadratically():
    """A driven oscillation of amplitude A gives a 2nd photocurrent harmonic ~ A^2."""
    mode = MechanicalMode(0.3e-9, hz_to_angular(200e3), hz_to_angular(F_M), 1e19, "m")
    ratios = []
    for force in (2e-10, 4e-10):
        cfg = make_config(power=60e-6, temperature=0.0, modes=(mode,))
        plan = plan_for(cfg, 40e-6, shot_noise=False, thermal_init=False,
                        force_tone=("m", force, mode.omega_m), transient_skip=20e-6)
        traj = integrate(cfg, plan)
        n = int(round(int(len(traj) * traj.dt_record * F_M) / F_M / traj.dt_record))
        t, i = traj.time[:n], traj.i[:n]
        h1 = _lockin(i, t, mode.omega_m)
        h2 = _lockin(i, t, 2 * mode.omega_m)
        amp = _lockin(traj.displacement("m")[:n], t, mode.omega_m)
        ratios.append((amp, h2 / h1))
    (a1, r1), (a2, r2) = ratios
    assert a2 / a1 == pytest.approx(2.0, rel=0.02)
    assert r2 / r1 == pytest.approx(2.0, rel=0.05)


def test_shot_noise_budget_is_negligible(ref):
    b = shot_noise_force_budget(ref, "crown4")
    assert b["ratio"] < 1e-2
    assert b["feedback_shot"] == pytest.approx(b["ratio"] * b["thermal"])


@pytest.mark.slow
def test_unstable_mode_saturates_while_probe_stays_thermal(saturated_point):
    traj = saturated_point.trajectory
    lc = saturated_point.limit_cycle
    assert lc is not None and lc.mode_label == "crown4"
    with pytest.raises(NotSaturatedError):
        limit_cycle(traj.sliced(traj.window(saturated_point.lead_in)), "crown6")
    env4 = envelope(traj, "crown4")
    assert env4[-1000:].mean() > 100 * env4[1000:2000].mean()


@pytest.mark.slow
def test_mixing_products_in_saturated_photocurrent(saturated_point):
    raw = saturated_point.raw
    for f in (14.6e6, 42.6e6):
        assert line_present(raw, f), f"no line at {f / 1e6:.1f} MHz"


@pytest.mark.slow
def test_feedback_prevents_saturation(suppressed_point):
    assert suppressed_point.limit_cycle is None
    assert suppressed_point.gamma_eff > 0
