"""Wave-atom-optics dynamics on a photon-recoil momentum lattice.

The ground-state momentum density matrix rho(kappa, kappa') is coupled by the
probe only between sites differing by exactly one recoil, so the lattice
``kappa = offset + n`` closes with every fractional offset evolving
independently.  Several offset families can be carried at once to sample a
thermal gas more finely than unit spacing allows; each family then holds its
share of the total weight and the probe source sums over all of them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import erfcinv

from .dispersion import Model
from .integrators import IntegrationError, Trajectory, run_rk4
from .params import ControlParams, ThermalSpec, ZeroTemperature, maxwell_boltzmann_pdf

TRAJECTORY_COLUMNS = ("tau", "re_A", "im_A", "abs_A", "re_B", "im_B", "trace", "hermiticity_error")
EDGE_TOLERANCE = 1e-8
TRUNCATION_TOLERANCE = 1e-10


class LatticeTooSmall(ValueError):
    """The lattice cannot hold the requested state."""


@dataclass(frozen=True)
class MomentumLattice:
    """Sites ``kappa = offset + f / n_families + n`` for ``kappa_min <= n <= kappa_max``."""

    kappa_min: int
    kappa_max: int
    offset: float = 0.0
    n_families: int = 1

    def __post_init__(self):
        if int(self.kappa_min) != self.kappa_min or int(self.kappa_max) != self.kappa_max:
            raise ValueError("lattice bounds must be integers")
        if self.kappa_max - self.kappa_min < 2:
            raise ValueError("lattice needs kappa_max - kappa_min >= 2")
        if not 0.0 <= self.offset < 1.0:
            raise ValueError("offset must lie in [0, 1)")
        if self.n_families < 1:
            raise ValueError("n_families must be >= 1")

    @classmethod
    def symmetric(cls, half_width: int, n_families: int = 1) -> "MomentumLattice":
        return cls(-half_width, half_width, 0.0, n_families)

    @property
    def size(self) -> int:
        return self.kappa_max - self.kappa_min + 1

    @property
    def offsets(self) -> np.ndarray:
        return self.offset + np.arange(self.n_families) / self.n_families

    @property
    def sites(self) -> np.ndarray:
        """Site momenta, shape (n_families, size)."""
        n = np.arange(self.kappa_min, self.kappa_max + 1)
        return self.offsets[:, None] + n[None, :]


def _stack(x, lattice: MomentumLattice):
    """View a single-family array with a leading family axis."""
    return x[None] if lattice.n_families == 1 else x


def _unstack(x, lattice: MomentumLattice):
    return x[0] if lattice.n_families == 1 else x


@dataclass(frozen=True)
class DensityState:
    """Density matrix per offset family; shape (M, M), or (F, M, M) for F > 1 families."""

    lattice: MomentumLattice
    rho: np.ndarray
    probe: complex
    tau: float = 0.0

    def __post_init__(self):
        rho = np.asarray(self.rho, dtype=complex)
        m = self.lattice.size
        want = (m, m) if self.lattice.n_families == 1 else (self.lattice.n_families, m, m)
        if rho.shape != want:
            raise ValueError(f"rho must have shape {want}, got {rho.shape}")
        object.__setattr__(self, "rho", rho)
        object.__setattr__(self, "probe", complex(self.probe))

    @property
    def trace(self) -> float:
        return float(np.einsum("fii->", _stack(self.rho, self.lattice)).real)

    @property
    def hermiticity_error(self) -> float:
        r = _stack(self.rho, self.lattice)
        return float(np.max(np.abs(r - np.conj(np.swapaxes(r, -1, -2)))))

    def populations(self) -> np.ndarray:
        return np.real(np.diagonal(self.rho, axis1=-2, axis2=-1))


@dataclass(frozen=True)
class CoherenceState:
    """Linearised one-recoil coherences ``drho[..., i] = delta rho(kappa_i, kappa_i + 1)``."""

    lattice: MomentumLattice
    drho: np.ndarray
    weights: np.ndarray
    probe: complex
    tau: float = 0.0

    def __post_init__(self):
        m = self.lattice.size
        lead = () if self.lattice.n_families == 1 else (self.lattice.n_families,)
        drho = np.asarray(self.drho, dtype=complex)
        w = np.asarray(self.weights, dtype=float)
        if drho.shape != lead + (m - 1,) or w.shape != lead + (m,):
            raise ValueError("drho / weights shapes do not match the lattice")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("weights must be nonnegative and sum to 1")
        object.__setattr__(self, "drho", drho)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "probe", complex(self.probe))


class DensityDerivative(NamedTuple):
    drho: np.ndarray
    dprobe: complex


class CoherenceDerivative(NamedTuple):
    ddrho: np.ndarray
    dprobe: complex


# --------------------------------------------------------------------------
# nonlinear density-matrix equations


def _shift(r, axis, step):
    """out[..., i, ...] = r[..., i + step, ...] along ``axis``, zero outside the lattice."""
    out = np.zeros_like(r)
    n = r.shape[axis]
    src = [slice(None)] * r.ndim
    dst = [slice(None)] * r.ndim
    if step > 0:
        src[axis], dst[axis] = slice(step, n), slice(0, n - step)
    else:
        src[axis], dst[axis] = slice(0, n + step), slice(-step, n)
    out[tuple(dst)] = r[tuple(src)]
    return out


def _density_source(r):
    """sum over families and kappa of rho(kappa, kappa + 1)."""
    return np.einsum("fii->", r[:, :-1, 1:])


def _density_derivative(r, a, kinetic, c: ControlParams):
    d = -1j * kinetic * r
    d += 0.5j * np.conj(a) * (_shift(r, -1, 1) - _shift(r, -2, -1))
    d -= 0.5j * a * (_shift(r, -2, 1) - _shift(r, -1, -1))
    da = 1j * c.delta * a - 1j * c.alpha * _density_source(r)
    return d, da


def _kinetic(lattice: MomentumLattice):
    k = lattice.sites
    return k[:, :, None] ** 2 - k[:, None, :] ** 2


def _check_edges(r, tol, step=None):
    pops = np.real(np.diagonal(r, axis1=-2, axis2=-1))
    edge = max(np.max(np.abs(pops[:, 0])), np.max(np.abs(pops[:, -1])))
    if edge > tol:
        msg = f"lattice too small: edge occupancy {edge:.3g} exceeds {tol:.3g}"
        if step is None:
            raise LatticeTooSmall(msg)
        raise IntegrationError(msg, step)


def wao_nonlinear_rhs(state: DensityState, c: ControlParams, edge_tol: float | None = EDGE_TOLERANCE) -> DensityDerivative:
    """Time derivative of (rho, A); sites beyond the lattice count as empty.

    Raises
    ------
    LatticeTooSmall
        If an edge population exceeds ``edge_tol`` (pass None to skip).
    """
    r = _stack(state.rho, state.lattice)
    if edge_tol is not None:
        _check_edges(r, edge_tol)
    d, da = _density_derivative(r, state.probe, _kinetic(state.lattice), c)
    return DensityDerivative(_unstack(d, state.lattice), complex(da))


def density_bunching(state: DensityState) -> complex:
    """sum_kappa rho(kappa, kappa + 1), the probe source term."""
    return complex(_density_source(_stack(state.rho, state.lattice)))


def momentum_invariant(state: DensityState, c: ControlParams) -> float:
    """sum_kappa kappa rho(kappa, kappa) - |A|^2 / (2 alpha), constant under the exact flow."""
    if c.alpha == 0:
        raise ValueError("invariant undefined for alpha = 0")
    r = _stack(state.rho, state.lattice)
    mean_k = float(np.sum(state.lattice.sites * np.real(np.diagonal(r, axis1=-2, axis2=-1))))
    return mean_k - abs(state.probe) ** 2 / (2.0 * c.alpha)


def free_evolution(state: DensityState, tau: float) -> DensityState:
    """Exact A = 0 propagation: rho(kappa, kappa') exp(-i (kappa^2 - kappa'^2) tau)."""
    phase = np.exp(-1j * _kinetic(state.lattice) * tau)
    r = _stack(state.rho, state.lattice) * phase
    return DensityState(state.lattice, _unstack(r, state.lattice), state.probe, state.tau + tau)


def required_half_width(thermal: ThermalSpec, tol: float = TRUNCATION_TOLERANCE) -> int:
    """Smallest symmetric half-width whose truncated thermal weight is below ``tol``."""
    if isinstance(thermal, ZeroTemperature):
        return 4
    # mass beyond |kappa| > h is erfc(2 beta h)
    return max(4, math.ceil(float(erfcinv(tol)) / (2.0 * thermal.beta)))


def thermal_weights(lattice: MomentumLattice, thermal: ThermalSpec, tol: float = TRUNCATION_TOLERANCE):
    """Site populations N(kappa)/N, renormalised over the whole lattice.

    Raises
    ------
    LatticeTooSmall
        If the continuum weight outside the lattice exceeds ``tol``, or a
        zero-temperature gas has no site at kappa = offset.
    """
    k = lattice.sites
    if isinstance(thermal, ZeroTemperature):
        if not lattice.kappa_min <= 0 <= lattice.kappa_max:
            raise LatticeTooSmall("zero temperature needs the lattice to contain n = 0")
        w = np.zeros_like(k)
        w[0, -lattice.kappa_min] = 1.0
        return _unstack(w, lattice)
    lo = lattice.kappa_min + lattice.offset
    hi = lattice.kappa_max + lattice.offset + (lattice.n_families - 1) / lattice.n_families
    b2 = 2.0 * thermal.beta
    outside = 0.5 * (math.erfc(-b2 * lo) + math.erfc(b2 * hi)) if lo < 0 < hi else 1.0
    if outside > tol:
        raise LatticeTooSmall(
            f"truncated thermal weight {outside:.3g} > {tol:g}; need half-width >= {required_half_width(thermal, tol)}"
        )
    w = maxwell_boltzmann_pdf(k, thermal)
    return _unstack(w / w.sum(), lattice)


def init_thermal_density(lattice: MomentumLattice, thermal: ThermalSpec, probe0: complex = 0.0) -> DensityState:
    """Diagonal thermal-equilibrium density matrix with unit trace."""
    w = _stack(np.asarray(thermal_weights(lattice, thermal)), lattice)
    rho = np.zeros(w.shape + (w.shape[-1],), dtype=complex)
    idx = np.arange(w.shape[-1])
    rho[:, idx, idx] = w
    return DensityState(lattice, _unstack(rho, lattice), probe0)


def init_coherences(lattice: MomentumLattice, thermal: ThermalSpec, probe0: complex = 1e-6) -> CoherenceState:
    """Linearised state with weights from ``thermal`` and vanishing coherences."""
    w = np.asarray(thermal_weights(lattice, thermal))
    drho = np.zeros(w.shape[:-1] + (w.shape[-1] - 1,), dtype=complex)
    return CoherenceState(lattice, drho, w, probe0)


# --------------------------------------------------------------------------
# linearised coherences and the zero-temperature oscillator


def _coherence_vector_rhs(state: CoherenceState, c: ControlParams):
    lat = state.lattice
    k = lat.sites[:, :-1]
    freq = 1j * (2.0 * k + 1.0)
    w = _stack(state.weights, lat)
    drive = -0.5j * (w[:, 1:] - w[:, :-1])
    shape = k.shape
    n = k.size

    def f(y):
        x = y[:n].reshape(shape)
        a = y[n]
        out = np.empty_like(y)
        out[:n] = (freq * x + drive * a).ravel()
        out[n] = 1j * (c.delta * a - c.alpha * x.sum())
        return out

    return f


def _coherence_vector(state: CoherenceState):
    return np.concatenate([np.ravel(state.drho), [state.probe]])


def wao_linearized_rhs(state: CoherenceState, c: ControlParams) -> CoherenceDerivative:
    y = _coherence_vector(state)
    d = _coherence_vector_rhs(state, c)(y)
    return CoherenceDerivative(d[:-1].reshape(state.drho.shape), complex(d[-1]))


def zero_t_oscillator_rhs(B: complex, Bdot: complex, A: complex, model: Model, c: ControlParams):
    """(dB, dBdot, dA) for B'' = -B - A (WAO) or B'' = -A (RAO), A' = i(Delta A - alpha B)."""
    model = Model(model)
    restoring = B if model is Model.WAO else 0.0
    return complex(Bdot), complex(-restoring - A), complex(1j * (c.delta * A - c.alpha * B))


# --------------------------------------------------------------------------
# integration


def integrate(
    state,
    c: ControlParams,
    dt: float = 1e-3,
    n_steps: int = 1000,
    stride: int = 1,
    edge_tol: float | None = EDGE_TOLERANCE,
) -> Trajectory:
    """RK4 run of a DensityState or a CoherenceState.

    Rows hold ``TRAJECTORY_COLUMNS``.  For coherences B is the total
    sum of delta rho(kappa, kappa + 1); trace and Hermiticity are NaN.

    Raises
    ------
    IntegrationError
        On a non-finite state or edge occupancy above ``edge_tol``.
    """
    if isinstance(state, DensityState):
        lat = state.lattice
        r0 = _stack(state.rho, lat)
        shape = r0.shape
        kin = _kinetic(lat)
        n = r0.size

        def f(y):
            d, da = _density_derivative(y[:n].reshape(shape), y[n], kin, c)
            return np.concatenate([d.ravel(), [da]])

        def observe(step, y):
            r = y[:n].reshape(shape)
            a = y[n]
            b = _density_source(r)
            tr = np.einsum("fii->", r).real
            herm = np.max(np.abs(r - np.conj(np.swapaxes(r, -1, -2))))
            return (state.tau + step * dt, a.real, a.imag, abs(a), b.real, b.imag, tr, herm)

        if edge_tol is not None:
            _check_edges(r0, edge_tol)

        def check(step, y):
            if edge_tol is not None:
                _check_edges(y[:n].reshape(shape), edge_tol, step)

        rows, y = run_rk4(f, np.concatenate([r0.ravel(), [state.probe]]), dt, n_steps, stride, observe, check)
        final = DensityState(lat, _unstack(y[:n].reshape(shape), lat), complex(y[n]), state.tau + n_steps * dt)
        return Trajectory(TRAJECTORY_COLUMNS, rows.real, final)

    if isinstance(state, CoherenceState):
        f = _coherence_vector_rhs(state, c)

        def observe(step, y):
            a = y[-1]
            b = y[:-1].sum()
            return (state.tau + step * dt, a.real, a.imag, abs(a), b.real, b.imag, np.nan, np.nan)

        rows, y = run_rk4(f, _coherence_vector(state), dt, n_steps, stride, observe)
        final = CoherenceState(
            state.lattice, y[:-1].reshape(state.drho.shape), state.weights, complex(y[-1]), state.tau + n_steps * dt
        )
        return Trajectory(TRAJECTORY_COLUMNS, rows.real, final)

    raise TypeError(f"cannot integrate {type(state).__name__}")


OSCILLATOR_COLUMNS = ("tau", "re_A", "im_A", "abs_A", "re_B", "im_B")


def integrate_oscillator(
    B0: complex, Bdot0: complex, A0: complex, model: Model, c: ControlParams, dt: float = 1e-3, n_steps: int = 1000, stride: int = 1
) -> Trajectory:
    """RK4 run of the zero-temperature oscillator form; ``final`` is (B, Bdot, A)."""

    def f(y):
        return np.array(zero_t_oscillator_rhs(y[0], y[1], y[2], model, c))

    def observe(step, y):
        return (step * dt, y[2].real, y[2].imag, abs(y[2]), y[0].real, y[0].imag)

    rows, y = run_rk4(f, np.array([B0, Bdot0, A0], dtype=complex), dt, n_steps, stride, observe)
    return Trajectory(OSCILLATOR_COLUMNS, rows.real, tuple(complex(v) for v in y))
