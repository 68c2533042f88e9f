"""Full two-level atom model in momentum space, used to validate adiabatic elimination.

Ground and excited momentum density matrices plus the optical coherence are
kept on a grid ``k = n * base``; the probe and pump shift momenta by
``k1 = m1 * base`` and ``k2 = m2 * base``.  Matrices are normalised per atom
(total trace 1), so the field sources carry a factor N.

Convention: ``rho_eg[i, j] = <c_g^dag(k_j) c_e(k_i)>`` is indexed by the
excited-state momentum first.  Equations of motion, summing over i = 1, 2::

    d rho_gg(k,k')/dt = -i eps(k,k') rho_gg + g_i a_i^* rho_eg(k-k_i, k') + g_i^* a_i rho_ge(k, k'-k_i)
    d rho_eg(k,k')/dt = -i (eps + w0) rho_eg + g_i^* a_i [rho_ee(k, k'-k_i) - rho_gg(k+k_i, k')]
    d rho_ee(k,k')/dt = -i eps rho_ee - g_i a_i^* rho_eg(k, k'+k_i) - g_i^* a_i rho_ge(k+k_i, k')
    d a_i/dt          = -i w_i a_i + g_i N sum_k rho_eg(k, k+k_i)

with ``eps(k,k') = hbar (k^2 - k'^2) / 2m``.  Integration happens in a frame
rotating at ``frame_frequency`` (usually the pulled pump frequency), which
removes the optical frequency from every coherence and field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import wao
from .dispersion import Model, find_unstable_root
from .integrators import Trajectory, run_rk4
from .params import HBAR, ControlParams, ParameterError, PhysicalParams, ZERO, derive_control_params, pulled_frequency, recoil_frequency

# RK4 step as a fraction of the fastest period 1/|omega - omega0|
STEP_FRACTION = 0.4


@dataclass(frozen=True)
class MomentumGrid:
    """Wavenumbers ``n * base`` for ``n_min <= n <= n_max``."""

    base: float
    n_min: int
    n_max: int

    def __post_init__(self):
        if not self.base > 0:
            raise ParameterError("grid base wavenumber must be positive")
        if self.n_max <= self.n_min:
            raise ParameterError("empty momentum grid")

    @property
    def size(self) -> int:
        return self.n_max - self.n_min + 1

    @property
    def k(self) -> np.ndarray:
        return self.base * np.arange(self.n_min, self.n_max + 1)

    def steps(self, wavenumber: float) -> int:
        """Integer number of grid sites spanned by ``wavenumber``."""
        m = wavenumber / self.base
        if abs(m - round(m)) > 1e-9 * max(1.0, abs(m)):
            raise ParameterError(
                f"wavenumber {wavenumber:g} is not an integer multiple of the grid base {self.base:g}"
            )
        return int(round(m))

    def index(self, n: int) -> int:
        return n - self.n_min


@dataclass(frozen=True)
class TwoLevelState:
    grid: MomentumGrid
    rho_gg: np.ndarray
    rho_ee: np.ndarray
    rho_eg: np.ndarray
    a1: complex
    a2: complex
    t: float = 0.0

    def __post_init__(self):
        m = self.grid.size
        for name in ("rho_gg", "rho_ee", "rho_eg"):
            arr = np.asarray(getattr(self, name), dtype=complex)
            if arr.shape != (m, m):
                raise ValueError(f"{name} must be {m}x{m}")
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "a1", complex(self.a1))
        object.__setattr__(self, "a2", complex(self.a2))

    @property
    def total_trace(self) -> float:
        return float(np.trace(self.rho_gg).real + np.trace(self.rho_ee).real)

    @property
    def excited_population(self) -> float:
        return float(np.trace(self.rho_ee).real)


def _rows(x, step):
    """out[i, :] = x[i + step, :], zero outside the grid."""
    return wao._shift(x, 0, step)


def _cols(x, step):
    """out[:, j] = x[:, j + step], zero outside the grid."""
    return wao._shift(x, 1, step)


class _Model:
    """Precomputed pieces of the right-hand side for one parameter set."""

    def __init__(self, grid: MomentumGrid, p: PhysicalParams, frame_frequency: float):
        k = grid.k
        self.grid = grid
        self.m = grid.size
        self.eps = HBAR * (k[:, None] ** 2 - k[None, :] ** 2) / (2.0 * p.m)
        self.shifts = (grid.steps(p.k1), grid.steps(p.k2))
        self.g = (complex(p.g1), complex(p.g2))
        self.w0 = p.omega0 - frame_frequency
        self.w = (p.omega1 - frame_frequency, p.omega2 - frame_frequency)
        self.N = p.N

    def rhs(self, gg, ee, eg, a):
        ge = eg.conj().T
        dgg = -1j * self.eps * gg
        deg = -1j * (self.eps + self.w0) * eg
        dee = -1j * self.eps * ee
        da = []
        for g, ai, w, s in zip(self.g, a, self.w, self.shifts):
            ga, gca = g * np.conj(ai), np.conj(g) * ai
            dgg += ga * _rows(eg, -s) + gca * _cols(ge, -s)
            deg += gca * (_cols(ee, -s) - _rows(gg, s))
            dee -= ga * _cols(eg, s) + gca * _rows(ge, s)
            source = np.trace(eg, offset=s)
            da.append(-1j * w * ai + g * self.N * source)
        return dgg, dee, deg, da

    def pack(self, st: TwoLevelState):
        return np.concatenate([st.rho_gg.ravel(), st.rho_ee.ravel(), st.rho_eg.ravel(), [st.a1, st.a2]])

    def unpack(self, y):
        n = self.m * self.m
        gg = y[:n].reshape(self.m, self.m)
        ee = y[n : 2 * n].reshape(self.m, self.m)
        eg = y[2 * n : 3 * n].reshape(self.m, self.m)
        return gg, ee, eg, (y[3 * n], y[3 * n + 1])

    def vector_rhs(self, y):
        dgg, dee, deg, da = self.rhs(*self.unpack(y))
        return np.concatenate([dgg.ravel(), dee.ravel(), deg.ravel(), da])


def full_two_level_rhs(state: TwoLevelState, p: PhysicalParams, frame_frequency: float = 0.0):
    """Time derivatives (d rho_gg, d rho_ee, d rho_eg, d a1, d a2) in the given rotating frame.

    Raises
    ------
    ParameterError
        If k1 or k2 is not an integer multiple of the grid base.
    """
    model = _Model(state.grid, p, frame_frequency)
    dgg, dee, deg, (da1, da2) = model.rhs(state.rho_gg, state.rho_ee, state.rho_eg, (state.a1, state.a2))
    return dgg, dee, deg, complex(da1), complex(da2)


def adiabatic_coherence(rho_gg, a1, a2, p: PhysicalParams, grid: MomentumGrid, detuning: float):
    """Quasi-steady optical coherence for a far-detuned drive.

    ``rho_eg(k, k') = -(i / detuning) [g1^* a1 rho_gg(k + k1, k') + g2^* a2 rho_gg(k + k2, k')]``
    with the fields expressed in the same frame as the coherence.
    """
    if detuning == 0:
        raise ParameterError("adiabatic coherence needs a nonzero detuning")
    gg = np.asarray(rho_gg, dtype=complex)
    m1, m2 = grid.steps(p.k1), grid.steps(p.k2)
    drive = np.conj(p.g1) * a1 * _rows(gg, m1) + np.conj(p.g2) * a2 * _rows(gg, m2)
    return -1j * drive / detuning


TWO_LEVEL_COLUMNS = ("t", "re_a1", "im_a1", "re_a2", "im_a2", "trace", "excited")


def integrate(
    state: TwoLevelState,
    p: PhysicalParams,
    dt: float,
    n_steps: int,
    stride: int = 1,
    frame_frequency: float = 0.0,
    observe=None,
) -> Trajectory:
    """RK4 run; rows hold ``TWO_LEVEL_COLUMNS`` unless a custom ``observe(t, state)`` is given."""
    model = _Model(state.grid, p, frame_frequency)

    def to_state(step, y):
        gg, ee, eg, (a1, a2) = model.unpack(y)
        return TwoLevelState(state.grid, gg, ee, eg, a1, a2, state.t + step * dt)

    def default(st):
        return (st.t, st.a1.real, st.a1.imag, st.a2.real, st.a2.imag, st.total_trace, st.excited_population)

    obs = observe or default
    columns = None if observe else TWO_LEVEL_COLUMNS
    rows, y = run_rk4(model.vector_rhs, model.pack(state), dt, n_steps, stride, lambda step, y: obs(to_state(step, y)))
    return Trajectory(columns, rows, to_state(n_steps, y))


# --------------------------------------------------------------------------
# validation against the adiabatically eliminated lattice model


@dataclass(frozen=True)
class ValidationScenario:
    params: PhysicalParams
    control: ControlParams
    grid: MomentumGrid
    state: TwoLevelState
    frame_frequency: float
    detuning: float
    recoil: float
    half_width: int

    def probe(self, a1, a2) -> complex:
        """Dimensionless probe A = g1^* g2 a2^* a1 / (2 omega_r (omega - omega0))."""
        p = self.params
        return complex(np.conj(p.g1) * p.g2 * np.conj(a2) * a1 / (2.0 * self.recoil * self.detuning))

    def ground_lattice(self, rho_gg) -> np.ndarray:
        """Ground-state matrix restricted to the recoil lattice kappa = k / (k1 - k2)."""
        span = self.grid.steps(self.params.k1 - self.params.k2)
        idx = np.array([self.grid.index(span * n) for n in range(-self.half_width, self.half_width + 1)])
        return rho_gg[np.ix_(idx, idx)]


def validation_scenario(
    alpha: float = 1.0,
    delta: float = 0.0,
    detuning_ratio: float = 1e4,
    half_width: int = 16,
    probe0: complex = 1e-2,
    n_atoms: int = 10**6,
) -> ValidationScenario:
    """Sodium-like counter-propagating CARL set up for a target (delta, alpha).

    The pump Rabi rate and the collective probe coupling are both set to
    ``(8 alpha)^{1/4} sqrt(omega_r |omega - omega0|)`` so that their ratio to
    the detuning falls like ``detuning_ratio^{-1/2}``.  Atoms start at rest in
    the ground state with the optical coherence already slaved to the fields.
    """
    mass = 22.99 * 1.66053906660e-27
    k = 2.0 * math.pi / 589.0e-9
    k1, k2 = -k, k
    wr = HBAR * (0.5 * (k1 - k2)) ** 2 / (2.0 * mass)
    omega0 = 2.0 * math.pi * 508.3e12
    x = detuning_ratio * wr
    rabi = (8.0 * alpha) ** 0.25 * math.sqrt(wr * x)
    g = rabi / math.sqrt(n_atoms)
    # pump frequency chosen so that the pulled frequency sits at omega0 + x
    omega = omega0 + x
    omega2 = omega - n_atoms * g * g / x
    # probe frequency placing delta1 = 4 omega_r delta
    omega1 = omega - n_atoms * g * g / x - 4.0 * wr * delta
    a2 = rabi / g
    a1 = probe0 * 2.0 * wr * x / (g * g * a2)
    p = PhysicalParams(m=mass, k1=k1, k2=k2, omega0=omega0, omega1=omega1, omega2=omega2, g1=g, g2=g, N=n_atoms, a2_0=a2)
    pulled = pulled_frequency(p)
    c = derive_control_params(p)

    grid = MomentumGrid(k, -2 * half_width - 1, 2 * half_width + 1)
    m = grid.size
    psi_g = np.zeros(m, dtype=complex)
    psi_g[grid.index(0)] = 1.0
    gg = np.outer(psi_g, psi_g.conj())
    eg = adiabatic_coherence(gg, a1, a2, p, grid, pulled.detuning)
    psi_e = eg[:, grid.index(0)]
    norm = 1.0 + np.vdot(psi_e, psi_e).real
    gg, eg, ee = gg / norm, eg / norm, np.outer(psi_e, psi_e.conj()) / norm
    state = TwoLevelState(grid, gg, ee, eg, a1, a2, 0.0)
    return ValidationScenario(p, c, grid, state, pulled.omega, pulled.detuning, recoil_frequency(p), half_width)


@dataclass(frozen=True)
class ValidationResult:
    tau: np.ndarray
    probe_full: np.ndarray
    probe_lattice: np.ndarray
    probe_error: float
    ground_error: float
    coherence_error: float
    trace_drift: float
    max_excited: float


def compare_with_lattice_model(sc: ValidationScenario, tau_end: float | None = None, tau_record: float = 0.02) -> ValidationResult:
    """Run the full model and the lattice model side by side.

    ``tau_end`` defaults to one gain e-folding of the zero-temperature
    lattice model.  Errors are maxima over the recorded times, relative to
    the peak |A| (probe) and to the peak coherence |rho(0, 1)| (ground).
    """
    if tau_end is None:
        tau_end = 1.0 / find_unstable_root(Model.WAO, sc.control, ZERO).gamma
    n_rec = max(1, int(round(tau_end / tau_record)))
    tau_record = tau_end / n_rec
    t_record = tau_record / (4.0 * sc.recoil)
    sub = max(1, math.ceil(t_record * abs(sc.detuning) / STEP_FRACTION))
    dt = t_record / sub

    def observe(st):
        return (sc.probe(st.a1, st.a2), st.total_trace, st.excited_population)

    samples = []

    def grab(st):
        samples.append(st)
        return observe(st)

    full = integrate(sc.state, sc.params, dt, n_rec * sub, sub, sc.frame_frequency, observe=grab)
    a_full = full.rows[:, 0]
    trace = full.rows[:, 1].real
    excited = full.rows[:, 2].real

    lat = wao.MomentumLattice.symmetric(sc.half_width)
    rho0 = sc.ground_lattice(sc.state.rho_gg)
    dtau = tau_record / max(1, math.ceil(tau_record / 1e-3))
    stride = int(round(tau_record / dtau))
    lattice_states = [wao.DensityState(lat, rho0, a_full[0])]
    rows = [a_full[0]]
    st = lattice_states[0]
    for _ in range(n_rec):
        tr = wao.integrate(st, sc.control, dtau, stride, stride, edge_tol=None)
        st = tr.final
        lattice_states.append(st)
        rows.append(st.probe)
    a_lat = np.array(rows)

    probe_error = float(np.max(np.abs(a_full - a_lat)) / np.max(np.abs(a_lat)))
    c01 = [(sc.half_width, sc.half_width + 1)]
    ground_err, coh_err = 0.0, 0.0
    scale = max(abs(s.rho[c01[0]]) for s in lattice_states)
    for full_state, lat_state in zip(samples, lattice_states):
        g = sc.ground_lattice(full_state.rho_gg)
        ground_err = max(ground_err, float(np.max(np.abs(g - lat_state.rho))) / scale)
        ad = adiabatic_coherence(full_state.rho_gg, full_state.a1, full_state.a2, sc.params, sc.grid, sc.detuning)
        coh_err = max(coh_err, float(np.max(np.abs(full_state.rho_eg - ad)) / np.max(np.abs(ad))))
    return ValidationResult(
        tau=np.arange(n_rec + 1) * tau_record,
        probe_full=a_full,
        probe_lattice=a_lat,
        probe_error=probe_error,
        ground_error=ground_err,
        coherence_error=coh_err,
        trace_drift=float(np.max(np.abs(trace - trace[0]))),
        max_excited=float(np.max(excited)),
    )
