import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfinv

from carl import dispersion, rao
from carl.dispersion import Model
from carl.integrators import IntegrationError, run_rk4
from carl.params import ZERO, ControlParams, FiniteTemperature

GAMMA_R_10 = math.sqrt(3) / 2 * 10 ** (1 / 3)


def series(traj):
    return np.c_[traj.column("tau"), traj.column("abs_A")]


def test_rhs_with_zero_field():
    st_ = rao.Ensemble(theta=[0.1, 1.0, 2.5], momentum=[0.3, -0.2, 1.0], probe=0.0)
    c = ControlParams(0.4, 2.0)
    d = rao.rao_nonlinear_rhs(st_, c)
    assert np.all(d.dmomentum == 0)
    assert np.array_equal(d.dtheta, st_.momentum)
    assert d.dprobe == pytest.approx(-1j * 2.0 * rao.bunching(st_))


def test_rhs_uniform_grid_has_no_source():
    s = rao.init_ensemble(64, ZERO, 0, 0.0)
    assert abs(rao.rao_nonlinear_rhs(s, ControlParams(0.0, 5.0)).dprobe) < 1e-15


def test_single_particle_force_identity():
    s = rao.Ensemble(theta=[0.0], momentum=[0.0], probe=1.0)
    d = rao.rao_nonlinear_rhs(s, ControlParams(0.0, 1.0))
    assert d.dmomentum[0] == 0.0


@settings(max_examples=50, deadline=None)
@given(
    theta=st.floats(-10, 10),
    re=st.floats(-5, 5),
    im=st.floats(-5, 5),
)
def test_force_is_real_and_matches_definition(theta, re, im):
    a = complex(re, im)
    s = rao.Ensemble(theta=[theta], momentum=[0.0], probe=a)
    d = rao.rao_nonlinear_rhs(s, ControlParams(0.0, 1.0))
    direct = -1j * a * np.exp(1j * theta) + np.conj(-1j * a * np.exp(1j * theta))
    assert abs(direct.imag) < 1e-14
    assert d.dmomentum[0] == pytest.approx(direct.real, abs=1e-13)


def test_ensemble_validation():
    with pytest.raises(ValueError):
        rao.Ensemble(theta=[0.0, 1.0], momentum=[0.0], probe=0)
    with pytest.raises(ValueError):
        rao.Ensemble(theta=[np.nan], momentum=[0.0], probe=0)


def test_bunching_values():
    assert rao.bunching(rao.Ensemble(np.zeros(10), np.zeros(10), 0)) == pytest.approx(1.0)
    assert abs(rao.bunching(rao.init_ensemble(101, ZERO, 0, 0))) < 1e-14
    s = rao.init_ensemble(10**4, ZERO, 5, 0, quiet_start=False)
    assert abs(rao.bunching(s)) < 0.05


def test_quiet_start_harmonics_and_reproducibility():
    for n in (3, 7, 64, 1000):
        s = rao.init_ensemble(n, FiniteTemperature(1.0), 1, 1e-6)
        assert abs(np.mean(np.exp(-1j * s.theta))) < 1e-12
        assert abs(np.mean(np.exp(-2j * s.theta))) < 1e-12
    a = rao.init_ensemble(50, FiniteTemperature(1.0), 9, 0, quiet_start=False)
    b = rao.init_ensemble(50, FiniteTemperature(1.0), 9, 0, quiet_start=False)
    assert np.array_equal(a.theta, b.theta) and np.array_equal(a.momentum, b.momentum)


def test_conserved_quantity():
    s = rao.Ensemble(np.zeros(4), np.zeros(4), 0)
    assert rao.conserved_quantity(s, ControlParams(0, 1.0)) == 0.0
    with pytest.raises(ValueError):
        rao.conserved_quantity(s, ControlParams(0, 0.0))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), delta=st.floats(-3, 3), alpha=st.floats(0.1, 10))
def test_conserved_quantity_has_zero_derivative(seed, delta, alpha):
    rng = np.random.default_rng(seed)
    n = 16
    s = rao.Ensemble(rng.uniform(0, 6.3, n), rng.normal(size=n), complex(*rng.normal(size=2)))
    c = ControlParams(delta, alpha)
    d = rao.rao_nonlinear_rhs(s, c)
    ddt = np.mean(d.dmomentum) + 2 * np.real(np.conj(s.probe) * d.dprobe) / alpha
    assert abs(ddt) < 1e-12 * (1 + abs(s.probe) ** 2)


def test_free_probe_rotates():
    s = rao.init_ensemble(8, ZERO, 0, 0.5 + 0.2j)
    tr = rao.integrate(s, ControlParams(1.3, 0.0), dt=1e-3, n_steps=10_000, stride=100)
    assert np.max(np.abs(tr.column("abs_A") - abs(0.5 + 0.2j))) < 1e-10
    assert np.isnan(tr.column("conserved")).all()


def _endpoint(dt, tau=2.0):
    s = rao.init_ensemble(32, FiniteTemperature(1.0), 3, 0.3, quiet_start=False)
    tr = rao.integrate(s, ControlParams(0.5, 2.0), dt=dt, n_steps=int(round(tau / dt)), stride=10**9)
    return np.concatenate([tr.final.theta, tr.final.momentum, [tr.final.probe.real, tr.final.probe.imag]])


def test_rk4_self_convergence_order():
    y1, y2, y3 = _endpoint(0.04), _endpoint(0.02), _endpoint(0.01)
    order = math.log2(np.linalg.norm(y1 - y2) / np.linalg.norm(y2 - y3))
    assert order == pytest.approx(4.0, abs=0.2)


def test_conserved_drift_and_bounded_bunching():
    s = rao.init_ensemble(1024, FiniteTemperature(1.0), 2, 0.1)
    c = ControlParams(0.0, 10.0)
    tr = rao.integrate(s, c, dt=1e-3, n_steps=20_000, stride=100)
    cons = tr.column("conserved")
    assert np.max(np.abs(cons - cons[0])) < 1e-8
    assert np.all(np.hypot(tr.column("re_B"), tr.column("im_B")) <= 1 + 1e-12)


def test_integrator_reports_nonfinite_step():
    def f(y):
        return y * y

    with pytest.raises(IntegrationError) as info:
        run_rk4(f, np.array([1.0]), 0.1, 100, 1, lambda step, y: (step,))
    assert 1 <= info.value.step < 100


def test_integrate_rejects_bad_step():
    s = rao.init_ensemble(4, ZERO, 0, 0.1)
    with pytest.raises(ValueError):
        rao.integrate(s, ControlParams(0, 1), dt=0.0, n_steps=1)


def test_velocity_group_validation():
    with pytest.raises(ValueError):
        rao.VelocityGroupState([0.0, 1.0], [0.5, 0.6], [0, 0], [0, 0], 0)
    with pytest.raises(ValueError):
        rao.VelocityGroupState([1.0, 1.0], [0.5, 0.5], [0, 0], [0, 0], 0)


def test_single_cold_group_reduces_to_free_oscillator():
    g = rao.VelocityGroupState([0.0], [1.0], [0.3 + 0.1j], [0.2j], 0.5 - 0.4j)
    d = rao.rao_linearized_rhs(g, ControlParams(0.7, 2.0))
    assert d.dB[0] == pytest.approx(-1j * 0.2j)
    assert d.dPi[0] == pytest.approx(-1j * (0.5 - 0.4j))
    # d^2B/dtau^2 = -i dPi = -A
    assert -1j * d.dPi[0] == pytest.approx(-(0.5 - 0.4j))
    assert d.dprobe == pytest.approx(1j * (0.7 * (0.5 - 0.4j) - 2.0 * (0.3 + 0.1j)))


def test_linearised_fixed_point():
    g = rao.maxwell_boltzmann_groups(FiniteTemperature(1.0), 41, probe0=0.0)
    d = rao.rao_linearized_rhs(g, ControlParams(0.3, 1.0))
    assert not np.any(d.dB) and not np.any(d.dPi) and d.dprobe == 0


def test_linearised_growth_matches_dispersion():
    c = ControlParams(0.0, 10.0)
    t = FiniteTemperature(1.0)
    g = rao.maxwell_boltzmann_groups(t, 801, 8.0)
    fit = rao.fit_growth_rate(series(rao.integrate(g, c, dt=1e-3, n_steps=10_000, stride=10)))
    root = dispersion.find_unstable_root(Model.RAO, c, t)
    assert fit.rate == pytest.approx(root.gamma, rel=0.02)


def test_momentum_shift_equals_detuning_shift():
    # shifting every momentum by P0 is the same as shifting Delta by P0
    p0 = 0.6
    t = FiniteTemperature(1.0)
    base = rao.maxwell_boltzmann_groups(t, 201, 7.0, probe0=1e-6)
    shifted = rao.VelocityGroupState(base.momentum + p0, base.weight, base.B, base.Pi, base.probe)
    c = ControlParams(0.2, 3.0)
    a = rao.integrate(shifted, c, dt=1e-3, n_steps=4000, stride=100).column("abs_A")
    b = rao.integrate(base, ControlParams(c.delta + p0, c.alpha), dt=1e-3, n_steps=4000, stride=100).column("abs_A")
    assert np.max(np.abs(a - b) / b) < 1e-9
    fit = rao.fit_growth_rate(series(rao.integrate(shifted, c, dt=1e-3, n_steps=12_000, stride=10)))
    root = dispersion.find_unstable_root(Model.RAO, ControlParams(c.delta + p0, c.alpha), t)
    assert fit.rate == pytest.approx(root.gamma, rel=0.02)


def test_linear_and_nonlinear_agree_in_small_signal_regime():
    c = ControlParams(0.0, 10.0)
    nl = rao.integrate(rao.init_ensemble(256, ZERO, 0, 1e-6), c, dt=1e-3, n_steps=5000, stride=10)
    lin = rao.integrate(rao.maxwell_boltzmann_groups(ZERO, probe0=1e-6), c, dt=1e-3, n_steps=5000, stride=10)
    a_nl, a_lin = nl.column("abs_A"), lin.column("abs_A")
    mask = a_nl < 1e-3
    assert mask.sum() > 100
    assert np.max(np.abs(a_nl[mask] - a_lin[mask]) / a_lin[mask]) < 1e-3


def test_fit_synthetic_exponential():
    tau = np.linspace(0, 20, 2001)
    fit = rao.fit_growth_rate(np.c_[tau, np.exp(0.5 * tau)])
    assert fit.rate == pytest.approx(0.5, abs=1e-12)
    assert fit.e_foldings > 3


def test_fit_refuses_flat_and_polynomial():
    tau = np.linspace(0, 20, 201)
    with pytest.raises(rao.NoExponentialRegime, match="no exponential regime detected"):
        rao.fit_growth_rate(np.c_[tau, np.full_like(tau, 2.0)])
    tau = np.linspace(0, 1000, 2001)
    with pytest.raises(rao.NoExponentialRegime):
        rao.fit_growth_rate(np.c_[tau, 1 + tau**3])


def test_fit_ceiling_drops_saturation():
    tau = np.linspace(0, 30, 3001)
    amp = 1e-6 * np.exp(tau) / (1 + 1e-6 * np.exp(tau))
    fit = rao.fit_growth_rate(np.c_[tau, amp], ceiling=1e-2)
    assert fit.rate == pytest.approx(1.0, rel=1e-2)


def test_nonlinear_zero_temperature_growth():
    c = ControlParams(0.0, 10.0)
    tr = rao.integrate(rao.init_ensemble(2048, ZERO, 0, 1e-6), c, dt=1e-3, n_steps=8000, stride=10)
    fit = rao.fit_growth_rate(series(tr), ceiling=1e-3)
    assert fit.rate == pytest.approx(GAMMA_R_10, rel=0.01)


def test_velocity_groups_match_phase_loaded_ensemble():
    # each group carries 8 particles on a uniform phase grid, so the particle
    # and group descriptions hold the same thermal distribution
    t = FiniteTemperature(1.0)
    c = ControlParams(0.3, 10.0)
    n_groups, per = 300, 8
    momenta = erfinv(2 * (np.arange(n_groups) + 0.5) / n_groups - 1) / t.beta
    theta = np.tile(2 * np.pi * np.arange(per) / per, n_groups)
    ens = rao.Ensemble(theta, np.repeat(momenta, per), 1e-6)
    zero = np.zeros(n_groups)
    groups = rao.VelocityGroupState(momenta, np.full(n_groups, 1 / n_groups), zero, zero, 1e-6)
    a = rao.integrate(ens, c, dt=1e-3, n_steps=6000, stride=10).column("abs_A")
    b = rao.integrate(groups, c, dt=1e-3, n_steps=6000, stride=10).column("abs_A")
    small = b < 1e-3
    assert small.sum() > 300
    assert np.max(np.abs(a[small] - b[small]) / b[small]) < 1e-6
