import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.special import erfcinv

from carl import dispersion, rao, wao
from carl.dispersion import Model
from carl.integrators import IntegrationError
from carl.params import ZERO, ControlParams, FiniteTemperature


def random_density(lattice, seed, scale=1.0):
    rng = np.random.default_rng(seed)
    m = lattice.size
    shape = (m, m) if lattice.n_families == 1 else (lattice.n_families, m, m)
    x = rng.normal(size=shape) + 1j * rng.normal(size=shape)
    rho = x @ np.conj(np.swapaxes(x, -1, -2))
    rho /= np.trace(rho, axis1=-2, axis2=-1).real.sum()
    return rho * scale


def series(traj):
    return np.c_[traj.column("tau"), traj.column("abs_A")]


def test_lattice_layout():
    lat = wao.MomentumLattice(-2, 3, 0.25, 2)
    assert lat.size == 6
    assert np.allclose(lat.offsets, [0.25, 0.75])
    assert lat.sites.shape == (2, 6)
    assert lat.sites[1, 0] == pytest.approx(-1.25)
    with pytest.raises(ValueError):
        wao.MomentumLattice(0, 1)
    with pytest.raises(ValueError):
        wao.MomentumLattice(-2, 2, 1.0)


def test_density_shape_check():
    with pytest.raises(ValueError):
        wao.DensityState(wao.MomentumLattice.symmetric(2), np.zeros((4, 4)), 0)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), re=st.floats(-2, 2), im=st.floats(-2, 2), families=st.sampled_from([1, 3]))
def test_rhs_preserves_trace_and_hermiticity(seed, re, im, families):
    lat = wao.MomentumLattice(-3, 3, 0.1, families)
    s = wao.DensityState(lat, random_density(lat, seed), complex(re, im))
    d = wao.wao_nonlinear_rhs(s, ControlParams(0.4, 1.5), edge_tol=None)
    dr = d.drho.reshape((-1, lat.size, lat.size))
    assert abs(np.einsum("fii->", dr)) < 1e-13
    assert np.max(np.abs(dr - np.conj(np.swapaxes(dr, -1, -2)))) < 1e-13


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), re=st.floats(-2, 2), im=st.floats(-2, 2), alpha=st.floats(0.1, 5))
def test_momentum_invariant_has_zero_derivative(seed, re, im, alpha):
    lat = wao.MomentumLattice.symmetric(3)
    s = wao.DensityState(lat, random_density(lat, seed), complex(re, im))
    c = ControlParams(0.3, alpha)
    d = wao.wao_nonlinear_rhs(s, c, edge_tol=None)
    dk = np.sum(lat.sites[0] * np.real(np.diag(d.drho)))
    ddt = dk - np.real(np.conj(s.probe) * d.dprobe) / alpha
    assert abs(ddt) < 1e-12 * (1 + abs(s.probe) ** 2)


def test_free_evolution_matches_rk4():
    # kinetic phases reach 16 rad per unit tau at |kappa| = 4, so dt is small
    lat = wao.MomentumLattice.symmetric(4)
    s = wao.DensityState(lat, random_density(lat, 7), 0.0)
    tr = wao.integrate(s, ControlParams(0.0, 0.0), dt=2.5e-4, n_steps=40_000, stride=40_000, edge_tol=None)
    exact = wao.free_evolution(s, 10.0)
    assert np.max(np.abs(tr.final.rho - exact.rho)) < 1e-10


def test_thermal_diagonal_is_stationary():
    lat = wao.MomentumLattice.symmetric(6)
    s = wao.init_thermal_density(lat, FiniteTemperature(1.0))
    d = wao.wao_nonlinear_rhs(s, ControlParams(0.5, 2.0))
    assert not np.any(d.drho) and d.dprobe == 0


def test_zero_temperature_drives_two_coherences():
    lat = wao.MomentumLattice.symmetric(4)
    s = wao.init_coherences(lat, ZERO, probe0=1.0)
    d = wao.wao_linearized_rhs(s, ControlParams(0.0, 1.0))
    nz = np.flatnonzero(d.ddrho)
    # coherences (-1, 0) and (0, 1)
    assert nz.tolist() == [3, 4]
    assert d.ddrho[3] == pytest.approx(-0.5j)
    assert d.ddrho[4] == pytest.approx(0.5j)


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 10**6), delta=st.floats(-3, 3), alpha=st.floats(0.1, 5))
def test_linearised_matches_nonlinear_near_equilibrium(seed, delta, alpha):
    lat = wao.MomentumLattice.symmetric(5)
    eq = wao.init_thermal_density(lat, FiniteTemperature(1.0))
    rng = np.random.default_rng(seed)
    eps = 1e-6
    x = eps * (rng.normal(size=lat.size - 1) + 1j * rng.normal(size=lat.size - 1))
    a = eps * complex(*rng.normal(size=2))
    rho = eq.rho.copy()
    i = np.arange(lat.size - 1)
    rho[i, i + 1] += x
    rho[i + 1, i] += np.conj(x)
    c = ControlParams(delta, alpha)
    nl = wao.wao_nonlinear_rhs(wao.DensityState(lat, rho, a), c)
    lin = wao.wao_linearized_rhs(wao.CoherenceState(lat, x, eq.populations(), a), c)
    assert np.max(np.abs(nl.drho[i, i + 1] - lin.ddrho)) < 1e-10 * eps * 100
    assert abs(nl.dprobe - lin.dprobe) < 1e-18


def test_oscillator_free_frequencies():
    c = ControlParams(0.0, 0.0)
    tr = wao.integrate_oscillator(1.0, 0.0, 0.0, Model.WAO, c, dt=1e-3, n_steps=int(2e3 * math.pi), stride=1)
    b = tr.column("re_B")
    tau = tr.column("tau")
    assert np.max(np.abs(b - np.cos(tau))) < 1e-10
    tr = wao.integrate_oscillator(0.0, 1.0, 0.0, Model.RAO, c, dt=1e-3, n_steps=5000, stride=50)
    assert np.allclose(tr.column("re_B"), tr.column("tau"), atol=1e-12)


def test_oscillator_matches_linearised_coherences():
    c = ControlParams(0.0, 1.0)
    lat = wao.MomentumLattice.symmetric(4)
    lin = wao.integrate(wao.init_coherences(lat, ZERO, 1e-6), c, dt=1e-3, n_steps=5000, stride=100)
    osc = wao.integrate_oscillator(0.0, 0.0, 1e-6, Model.WAO, c, dt=1e-3, n_steps=5000, stride=100)
    assert np.max(np.abs(lin.column("abs_A") - osc.column("abs_A")) / osc.column("abs_A")) < 1e-9


def test_linearised_thermal_growth_matches_dispersion():
    t = FiniteTemperature(1.0)
    c = ControlParams(0.0, 10.0)
    lat = wao.MomentumLattice.symmetric(wao.required_half_width(t) + 2, 16)
    tr = wao.integrate(wao.init_coherences(lat, t), c, dt=1e-3, n_steps=10_000, stride=10)
    root = dispersion.find_unstable_root(Model.WAO, c, t)
    assert rao.fit_growth_rate(series(tr)).rate == pytest.approx(root.gamma, rel=0.02)


@pytest.mark.parametrize("alpha", [1.0, 10.0])
def test_zero_temperature_chain(alpha):
    c = ControlParams(0.0, alpha)
    cubic = dispersion.zero_t_cubic(Model.WAO, c)[0].real
    closed = dispersion.gamma_closed_form(Model.WAO, c)
    # about nine e-foldings: A grows from 1e-6 past the 1e-3 cut
    n = math.ceil(9.0 / cubic / 1e-3)
    lat = wao.MomentumLattice.symmetric(6)
    lin = wao.integrate(wao.init_coherences(lat, ZERO, 1e-6), c, dt=1e-3, n_steps=n, stride=10)
    osc = wao.integrate_oscillator(0.0, 0.0, 1e-6, Model.WAO, c, dt=1e-3, n_steps=n, stride=10)
    nl = wao.integrate(wao.init_thermal_density(lat, ZERO, 1e-6), c, dt=1e-3, n_steps=n, stride=10)
    small = nl.column("abs_A") < 1e-3
    rates = [
        rao.fit_growth_rate(series(nl)[small]).rate,
        rao.fit_growth_rate(series(lin)[small]).rate,
        rao.fit_growth_rate(series(osc)[small]).rate,
        cubic,
    ]
    for a, b in zip(rates, rates[1:]):
        assert a == pytest.approx(b, rel=0.01)
    assert closed == pytest.approx(cubic, abs=1e-9)


def test_init_thermal_density():
    lat = wao.MomentumLattice.symmetric(4)
    s = wao.init_thermal_density(lat, ZERO)
    assert s.populations()[4] == 1.0 and s.trace == 1.0
    t = FiniteTemperature(1.0)
    s = wao.init_thermal_density(wao.MomentumLattice.symmetric(8, 16), t)
    assert s.trace == pytest.approx(1.0, abs=1e-14)
    m2 = np.sum(s.lattice.sites**2 * s.populations())
    assert m2 == pytest.approx(1 / (8 * t.beta**2), rel=0.05)


def test_single_family_second_moment_is_coarse():
    # one family samples the thermal curve on integers only
    t = FiniteTemperature(1.0)
    s = wao.init_thermal_density(wao.MomentumLattice.symmetric(8), t)
    m2 = np.sum(s.lattice.sites**2 * s.populations())
    assert abs(m2 - 1 / (8 * t.beta**2)) > 0.05 / 8


def test_insufficient_lattice_reports_width():
    t = FiniteTemperature(0.1)
    need = wao.required_half_width(t)
    assert need == math.ceil(float(erfcinv(1e-10)) / 0.2)
    with pytest.raises(wao.LatticeTooSmall, match=f">= {need}"):
        wao.init_thermal_density(wao.MomentumLattice.symmetric(need - 3), t)
    wao.init_thermal_density(wao.MomentumLattice.symmetric(need), t)
    with pytest.raises(wao.LatticeTooSmall):
        wao.thermal_weights(wao.MomentumLattice(1, 5), ZERO)


def test_edge_occupancy_is_reported():
    lat = wao.MomentumLattice.symmetric(3)
    rho = np.zeros((7, 7), dtype=complex)
    rho[0, 0] = 1.0
    s = wao.DensityState(lat, rho, 0.1)
    with pytest.raises(wao.LatticeTooSmall, match="lattice too small"):
        wao.wao_nonlinear_rhs(s, ControlParams(0, 1))
    with pytest.raises(wao.LatticeTooSmall):
        wao.integrate(s, ControlParams(0, 1))


def test_growing_state_hits_edge_during_run():
    lat = wao.MomentumLattice.symmetric(2)
    s = wao.init_thermal_density(lat, ZERO, 1e-3)
    with pytest.raises(IntegrationError, match="lattice too small") as info:
        wao.integrate(s, ControlParams(0.0, 10.0), dt=1e-3, n_steps=20_000)
    assert info.value.step > 0


def test_nonlinear_run_conserves_invariants():
    t = FiniteTemperature(1.0)
    c = ControlParams(0.0, 1.0)
    lat = wao.MomentumLattice.symmetric(wao.required_half_width(t) + 4, 4)
    s0 = wao.init_thermal_density(lat, t, 1e-3)
    tr = wao.integrate(s0, c, dt=1e-3, n_steps=10_000, stride=250)
    assert np.max(np.abs(tr.column("trace") - 1.0)) < 1e-12
    assert np.max(tr.column("hermiticity_error")) < 1e-12
    pops = tr.final.populations()
    assert pops.min() >= -1e-9 and pops.max() <= 1 + 1e-9
    p0, p1 = wao.momentum_invariant(s0, c), wao.momentum_invariant(tr.final, c)
    assert abs(p1 - p0) < 1e-9
    assert abs(tr.final.probe) > 10 * abs(s0.probe)
