import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from optomech.model import MechanicalMode
from optomech.response import (
    FrequencyResponse, NoThresholdError, PerturbativeWarning, SingularResponseError,
    bare_susceptibility, critical_gain, critical_gain_at, default_grid, effective_params,
    field_response, gamma_eff_at_power, instability_threshold, loop_terms,
    modified_susceptibility, printed_critical_gain, self_energy, transduction_transfer,
)
from optomech.steady_state import select_branch, spring_pull

from conftest import make_config

PROBE = MechanicalMode(0.3e-9, 2 * math.pi * 90e3, 2 * math.pi * 28.6e6, 1e19, "probe")


def on_resonance(cfg):
    """Shift the bare detuning so the pulled operating point sits at zero detuning."""
    o = cfg.optical
    n_res = 2 * o.gamma_in * cfg.photon_flux / o.gamma**2
    return cfg.with_optical(delta_0=-spring_pull(cfg) * n_res)


def test_bare_susceptibility_dc_and_resonance():
    chi = bare_susceptibility(PROBE, np.array([0.0, PROBE.omega_m])).values
    assert chi[0].imag == 0 and chi[0].real == pytest.approx(1 / PROBE.stiffness)
    assert chi[1].real == pytest.approx(0, abs=1e-12 * abs(chi[1]))
    grid = np.linspace(0.9, 1.1, 20001) * PROBE.omega_m
    mag = np.abs(bare_susceptibility(PROBE, grid).values)
    assert abs(grid[np.argmax(mag)] / PROBE.omega_m - 1) < 1e-4


def test_bare_susceptibility_hand_value():
    # 1 / (0.3e-9 kg * 2pi*90e3 /s * 2pi*28.6e6 /s) = 1 / 30484.8 N/m
    hand = 1.0 / (0.3e-9 * 565486.6776 * 179699099.8)
    assert hand == pytest.approx(3.2803e-5, rel=1e-4)
    chi = bare_susceptibility(PROBE, np.array([PROBE.omega_m])).values[0]
    assert abs(chi) == pytest.approx(hand, rel=1e-8)


def test_field_response_zero_coupling():
    cfg = make_config(g=0.0)
    c = field_response(cfg, None, np.array([1e8]))
    assert np.all(c.displacement == 0) and np.all(c.conj_displacement == 0)


def test_field_response_resonant_sideband():
    cfg = make_config(g=1e18)
    st_ = select_branch(cfg)
    c = field_response(cfg, st_, np.array([st_.delta_eff]))
    o = cfg.optical
    assert abs(c.input[0]) == pytest.approx(math.sqrt(2 * o.gamma_in) / o.gamma, rel=1e-12)


def test_field_response_matches_finite_difference():
    """DC displacement coefficient equals g * d a_bar / d Delta_0 of the static map."""
    g = 1e19
    cfg = make_config(g=g, delta_lw=0.7)
    c_x = field_response(cfg, None, np.array([0.0])).displacement[0, 0]
    rigid = make_config(g=0.0, delta_lw=0.7)
    d0 = rigid.optical.delta_0
    h = 1e-4 * rigid.optical.gamma

    def a_bar(delta):
        return select_branch(rigid.with_optical(delta_0=delta)).a_bar

    deriv = (a_bar(d0 + h) - a_bar(d0 - h)) / (2 * h)
    # static pull in ``cfg`` moves the operating point; evaluate both at the same Delta
    st_ = select_branch(cfg)
    shifted = (a_bar(st_.delta_eff + h) - a_bar(st_.delta_eff - h)) / (2 * h)
    scale = st_.a_bar / select_branch(rigid.with_optical(delta_0=st_.delta_eff)).a_bar
    assert g * shifted * scale == pytest.approx(c_x, rel=1e-6)
    assert abs(deriv) > 0


def test_transduction_vanishes_at_zero_detuning_and_coupling():
    w = np.linspace(1e8, 2e8, 11)
    # cancel the static pull so the operating point sits exactly on resonance
    cfg = on_resonance(make_config(delta_lw=0.0))
    st_ = select_branch(cfg)
    assert abs(st_.delta_eff) < 1e-9 * cfg.optical.gamma
    t = transduction_transfer(cfg, st_, w).values
    assert np.max(np.abs(t)) < 1e-8 * np.max(np.abs(transduction_transfer(make_config(), None, w).values))
    assert np.all(transduction_transfer(make_config(g=0.0), None, w).values == 0)


def test_transduction_odd_in_detuning():
    w = np.linspace(1e8, 2e8, 11)
    t_plus = transduction_transfer(make_config(power=1e-6, g=1e18), None, w).values
    t_minus = transduction_transfer(make_config(power=1e-6, g=1e18, delta_lw=-1.0), None, w).values
    np.testing.assert_allclose(t_plus, -t_minus, rtol=1e-8)


def test_closed_loop_consistency():
    """chi^-1(G) = chi^-1(0) - G T, with T from transduction_transfer."""
    cfg = make_config(power=100e-6)
    w = default_grid(cfg)
    gain = 3e-24 * np.exp(0.4j)
    chi_g = modified_susceptibility(cfg, None, gain, w).values
    chi_0 = modified_susceptibility(cfg, None, 0.0, w).values
    t = transduction_transfer(cfg, None, w).values
    np.testing.assert_allclose(1 / chi_g, 1 / chi_0 - gain * t, rtol=1e-12)


def test_zero_gain_zero_detuning_is_bare():
    cfg = on_resonance(make_config(delta_lw=0.0))
    w = default_grid(cfg)
    np.testing.assert_allclose(modified_susceptibility(cfg, None, 0.0, w).values,
                               bare_susceptibility(cfg.mechanics[0], w).values, rtol=1e-14)


def test_critical_gain_cancels():
    cfg = make_config(power=200e-6)
    w = default_grid(cfg)
    g = critical_gain(cfg, w)
    chi = modified_susceptibility(cfg, None, g, w).values
    chi0 = bare_susceptibility(cfg.mechanics[0], w).values
    assert np.max(np.abs(chi / chi0 - 1)) < 1e-12


def test_critical_gain_dc_real():
    g = critical_gain(make_config(), np.array([0.0])).values[0]
    assert g.imag == pytest.approx(0, abs=1e-12 * abs(g))
    assert abs(self_energy(make_config(), None, g, np.array([0.0]))[0]) < 1e-12 * abs(
        loop_terms(make_config(), None, np.array([0.0]))[0][0])


def test_critical_gain_is_conjugate_of_printed_form(capsys):
    cfg = make_config()
    w = cfg.mechanics[0].omega_m
    op = critical_gain_at(cfg, w)
    printed = complex(printed_critical_gain(cfg, w))
    ratio = op / printed
    print(f"\nG_crit(w_m) operational {op:.6e}, closed form {printed:.6e}, ratio {ratio:.6f}")
    assert op == pytest.approx(printed.conjugate(), rel=1e-9)
    assert abs(ratio) == pytest.approx(1.0, rel=1e-9)


def test_critical_gain_without_light_uses_reference_point():
    w = np.array([1e8, 1.5e8])
    dark = critical_gain(make_config(power=0.0), w).values
    lit = critical_gain(make_config(power=1e-4), w).values
    np.testing.assert_allclose(dark, lit, rtol=1e-9)


def test_reality_symmetry():
    cfg = make_config(power=80e-6)
    wp = np.linspace(0.5, 1.5, 101) * cfg.mechanics[0].omega_m
    w = np.concatenate([-wp[::-1], wp])
    chi = modified_susceptibility(cfg, None, 0.0, w).values
    np.testing.assert_allclose(chi[:101][::-1], np.conj(chi[101:]), rtol=1e-12)


def test_backaction_sign_flips_with_detuning():
    gm = PROBE.gamma_m
    shift = []
    for d in (1.0, -1.0):
        cfg = make_config(power=1e-9, g=1e18, delta_lw=d)
        shift.append(effective_params(cfg, None, 0.0, exact=False).gamma_eff - gm)
    assert shift[0] < 0 < shift[1]
    assert shift[0] == pytest.approx(-shift[1], rel=1e-9)


def test_effective_params_trivial_cases(quiet):
    cfg = on_resonance(make_config(delta_lw=0.0))
    ep = effective_params(cfg, None, 0.0)
    assert ep.gamma_eff == pytest.approx(PROBE.gamma_m, rel=1e-12)
    assert ep.omega_eff == pytest.approx(PROBE.omega_m, rel=1e-12)
    cfg = make_config(power=300e-6, g=4e19)
    w = cfg.mechanics[0].omega_m
    ep = effective_params(cfg, None, critical_gain_at(cfg, w))
    assert ep.gamma_eff == pytest.approx(PROBE.gamma_m, rel=1e-9)
    assert not ep.is_unstable


def test_perturbative_matches_pole_when_weak():
    cfg = make_config(power=20e-6, g=1e19)
    sigma = self_energy(cfg, None, 0.0, np.array([PROBE.omega_m]))[0]
    chi0 = bare_susceptibility(PROBE, np.array([PROBE.omega_m])).values[0]
    assert abs(sigma * chi0) < 0.01
    pert = effective_params(cfg, None, 0.0, exact=False)
    pole = effective_params(cfg, None, 0.0, exact=True)
    assert pole.gamma_eff - PROBE.gamma_m == pytest.approx(pert.gamma_eff - PROBE.gamma_m, rel=0.01)


def test_strong_backaction_warns_and_uses_pole():
    cfg = make_config(power=1e-3, g=1e20)
    with pytest.warns(PerturbativeWarning):
        ep = effective_params(cfg, None, 0.0)
    assert ep.method == "pole"


def test_gamma_eff_decreases_with_power_on_blue_side(quiet):
    cfg = make_config(g=1e20)
    powers = np.geomspace(1e-6, 3e-3, 12)
    gammas = [gamma_eff_at_power(cfg, p) for p in powers]
    assert all(b < a for a, b in zip(gammas, gammas[1:]))
    assert gammas[0] > 0 > gammas[-1]


def test_threshold_quarters_when_g_doubles(quiet):
    p1 = instability_threshold(make_config(g=5e19)).power
    p2 = instability_threshold(make_config(g=1e20)).power
    assert p2 == pytest.approx(p1 / 4, rel=0.05)


def test_threshold_bracket_and_tolerance(quiet):
    r = instability_threshold(make_config(g=1e20))
    lo, hi = r.bracket
    assert lo <= r.power <= hi and (hi - lo) <= 1e-4 * hi
    cfg = make_config(g=1e20)
    assert gamma_eff_at_power(cfg, lo) > 0 > gamma_eff_at_power(cfg, hi)


def test_no_threshold_with_critical_gain_or_red_detuning(quiet):
    cfg = make_config(g=1e20)
    g_crit = lambda w: critical_gain(cfg, np.atleast_1d(w)).values
    with pytest.raises(NoThresholdError):
        instability_threshold(cfg, gain=g_crit)
    with pytest.raises(NoThresholdError):
        instability_threshold(make_config(g=1e20, delta_lw=-1.0))


def test_reference_device_orders_instabilities(ref, quiet):
    th4 = instability_threshold(ref, "crown4").power
    assert th4 == pytest.approx(60e-6, rel=1e-3)
    try:
        th6 = instability_threshold(ref, "crown6").power
    except NoThresholdError:
        th6 = math.inf
    assert th4 < th6


def test_singular_response_reported():
    cfg = make_config(power=50e-6)
    w = np.linspace(1.7e8, 1.9e8, 5)
    m = cfg.mechanics[0]

    def killer(om):
        k, t = loop_terms(cfg, None, om)
        chi0_inv = m.mass * (m.omega_m**2 - om**2 + 1j * m.gamma_m * om)
        return (chi0_inv - k) / t

    with pytest.raises(SingularResponseError, match="omega="):
        modified_susceptibility(cfg, None, killer, w)


def test_default_grid_shape(ref):
    w = default_grid(ref, "crown6")
    m = ref.mode("crown6")
    assert w[0] == pytest.approx(0.5 * m.omega_m) and w[-1] == pytest.approx(1.5 * m.omega_m)
    assert np.all(np.diff(w) > 0) and w.size > 4096
    near = np.abs(w - m.omega_m) < 10 * m.gamma_m
    assert np.min(np.diff(w[near])) < np.max(np.diff(w)) / 4


def test_frequency_response_csv_round_trip(tmp_path):
    cfg = make_config()
    fr = critical_gain(cfg, default_grid(cfg))
    fr.to_csv(tmp_path / "g.csv")
    assert (tmp_path / "g.csv").read_text().startswith("# kind=gain units=N*s")
    back = FrequencyResponse.from_csv(tmp_path / "g.csv")
    np.testing.assert_array_equal(back.values, fr.values)
    assert back.kind == "gain"


def test_frequency_response_rejects_bad_grids():
    with pytest.raises(ValueError):
        FrequencyResponse(np.array([2.0, 1.0]), np.array([1, 1]), "gain")
    with pytest.raises(ValueError):
        FrequencyResponse(np.array([1.0, 2.0]), np.array([1, np.nan]), "gain")


@settings(max_examples=40, deadline=None)
@given(
    delta_lw=st.sampled_from([-2.0, -0.5, 0.3, 1.0, 2.5]),
    power=st.floats(1e-7, 1e-3),
    ratio=st.floats(0.1, 4.0),
)
def test_cancellation_property(delta_lw, power, ratio):
    cfg = make_config(power=power, delta_lw=delta_lw, gamma_in_ratio=ratio)
    w = np.linspace(0.5, 1.5, 257) * PROBE.omega_m
    chi = modified_susceptibility(cfg, None, critical_gain(cfg, w), w).values
    chi0 = bare_susceptibility(cfg.mechanics[0], w).values
    assert np.max(np.abs(chi / chi0 - 1)) < 1e-12
