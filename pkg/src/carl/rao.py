"""Ray-atom-optics dynamics: N point atoms on the optical grating plus the probe.

Dimensionless equations of motion::

    d theta_j / d tau = P_j
    d P_j / d tau     = -i A exp(i theta_j) + c.c. = 2 Im(A exp(i theta_j))
    d A / d tau       = i Delta A - i alpha <exp(-i theta)>

and their linearisation around free streaming in terms of velocity groups.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .integrators import Trajectory, run_rk4
from .params import (
    ControlParams,
    ThermalSpec,
    ZeroTemperature,
    maxwell_boltzmann_pdf,
    momentum_std,
    sample_momenta,
)

TRAJECTORY_COLUMNS = ("tau", "re_A", "im_A", "abs_A", "re_B", "im_B", "conserved")


class NoExponentialRegime(ValueError):
    """The amplitude series does not contain a clean exponential stretch."""


@dataclass(frozen=True)
class Ensemble:
    """Phases theta_j = 2 k0 z_j, momenta P_j = p_j / hbar k0, probe A at time tau."""

    theta: np.ndarray
    momentum: np.ndarray
    probe: complex
    tau: float = 0.0

    def __post_init__(self):
        theta = np.asarray(self.theta, dtype=float)
        momentum = np.asarray(self.momentum, dtype=float)
        if theta.ndim != 1 or theta.shape != momentum.shape or theta.size < 1:
            raise ValueError("theta and momentum must be equal-length 1-d arrays")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(momentum)) and np.isfinite(self.probe)):
            raise ValueError("ensemble state must be finite")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "momentum", momentum)
        object.__setattr__(self, "probe", complex(self.probe))

    @property
    def n(self) -> int:
        return self.theta.size


class EnsembleDerivative(NamedTuple):
    dtheta: np.ndarray
    dmomentum: np.ndarray
    dprobe: complex


@dataclass(frozen=True)
class VelocityGroupState:
    """Linearised bunching B(k) and conjugate momentum Pi(k) per velocity group."""

    momentum: np.ndarray
    weight: np.ndarray
    B: np.ndarray
    Pi: np.ndarray
    probe: complex
    tau: float = 0.0

    def __post_init__(self):
        arrays = {}
        for name, dtype in (("momentum", float), ("weight", float), ("B", complex), ("Pi", complex)):
            arrays[name] = np.atleast_1d(np.asarray(getattr(self, name), dtype=dtype))
            object.__setattr__(self, name, arrays[name])
        shape = arrays["momentum"].shape
        if any(a.shape != shape for a in arrays.values()) or len(shape) != 1:
            raise ValueError("group arrays must share one 1-d shape")
        w = arrays["weight"]
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("group weights must be nonnegative and sum to 1")
        if np.unique(arrays["momentum"]).size != shape[0]:
            raise ValueError("group momenta must be distinct")
        object.__setattr__(self, "probe", complex(self.probe))


class GroupDerivative(NamedTuple):
    dB: np.ndarray
    dPi: np.ndarray
    dprobe: complex


# --------------------------------------------------------------------------
# nonlinear ensemble


def bunching(state: Ensemble) -> complex:
    """<exp(-i theta)>: 0 for a uniform gas, 1 for perfect bunching."""
    return complex(np.mean(np.exp(-1j * state.theta)))


def rao_nonlinear_rhs(state: Ensemble, c: ControlParams) -> EnsembleDerivative:
    field = state.probe * np.exp(1j * state.theta)
    dmom = 2.0 * field.imag
    dprobe = 1j * c.delta * state.probe - 1j * c.alpha * bunching(state)
    return EnsembleDerivative(state.momentum.copy(), dmom, dprobe)


def conserved_quantity(state: Ensemble, c: ControlParams) -> float:
    """Momentum-field exchange invariant <P> + |A|^2 / alpha."""
    if c.alpha == 0:
        raise ValueError("invariant undefined for alpha = 0 (|A| itself is conserved)")
    return float(np.mean(state.momentum) + abs(state.probe) ** 2 / c.alpha)


def init_ensemble(
    n: int,
    thermal: ThermalSpec,
    seed: int,
    probe0: complex,
    quiet_start: bool = True,
) -> Ensemble:
    """Initial ensemble.

    A quiet start puts the phases on the uniform grid 2 pi j / n, so every
    harmonic below the n-th vanishes exactly; otherwise phases are drawn
    uniformly from a stream seeded by (seed, 1).
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    if quiet_start:
        theta = 2.0 * math.pi * np.arange(n) / n
    else:
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, 1])))
        theta = rng.uniform(0.0, 2.0 * math.pi, size=n)
    return Ensemble(theta=theta, momentum=sample_momenta(n, thermal, seed), probe=probe0, tau=0.0)


def _ensemble_vector_rhs(c: ControlParams, n: int):
    def f(y):
        theta = y[:n]
        p = y[n : 2 * n]
        a = complex(y[2 * n], y[2 * n + 1])
        e = np.exp(1j * theta)
        b = np.mean(e).conjugate()
        da = 1j * c.delta * a - 1j * c.alpha * b
        out = np.empty_like(y)
        out[:n] = p
        out[n : 2 * n] = 2.0 * (a * e).imag
        out[2 * n] = da.real
        out[2 * n + 1] = da.imag
        return out

    return f


def _group_vector_rhs(c: ControlParams, state: VelocityGroupState):
    m = state.momentum.size
    p, w = state.momentum, state.weight

    def f(y):
        b, pi, a = y[:m], y[m : 2 * m], y[2 * m]
        out = np.empty_like(y)
        out[:m] = -1j * pi
        out[m : 2 * m] = 1j * (p * p * b - 2.0 * p * pi - w * a)
        out[2 * m] = 1j * (c.delta * a - c.alpha * b.sum())
        return out

    return f


def rao_linearized_rhs(state: VelocityGroupState, c: ControlParams) -> GroupDerivative:
    y = np.concatenate([state.B, state.Pi, [state.probe]])
    d = _group_vector_rhs(c, state)(y)
    m = state.momentum.size
    return GroupDerivative(d[:m], d[m : 2 * m], complex(d[2 * m]))


def maxwell_boltzmann_groups(thermal: ThermalSpec, n_groups: int = 401, width: float = 7.0, probe0: complex = 1e-6):
    """Velocity groups discretising the thermal momentum distribution.

    Groups sit on a uniform P grid spanning ``width`` standard deviations on
    each side, weighted by f(P/2); B and Pi start at zero.
    """
    if isinstance(thermal, ZeroTemperature):
        p = np.zeros(1)
        w = np.ones(1)
    else:
        sigma = momentum_std(thermal)
        p = np.linspace(-width * sigma, width * sigma, n_groups)
        w = maxwell_boltzmann_pdf(p / 2.0, thermal)
        w = w / w.sum()
    zeros = np.zeros(p.size, dtype=complex)
    return VelocityGroupState(momentum=p, weight=w, B=zeros, Pi=zeros.copy(), probe=probe0)


def integrate(state, c: ControlParams, dt: float = 1e-3, n_steps: int = 1000, stride: int = 1) -> Trajectory:
    """RK4 run of either the nonlinear ensemble or the linearised groups.

    Rows hold ``TRAJECTORY_COLUMNS``; for velocity groups B is the total
    bunching sum_k B(k) and the conserved column is NaN.
    """
    if isinstance(state, Ensemble):
        n = state.n
        y0 = np.concatenate([state.theta, state.momentum, [state.probe.real, state.probe.imag]])
        f = _ensemble_vector_rhs(c, n)

        def observe(step, y):
            a = complex(y[2 * n], y[2 * n + 1])
            b = np.mean(np.exp(-1j * y[:n]))
            cons = np.mean(y[n : 2 * n]) + abs(a) ** 2 / c.alpha if c.alpha > 0 else np.nan
            return (state.tau + step * dt, a.real, a.imag, abs(a), b.real, b.imag, cons)

        rows, y = run_rk4(f, y0, dt, n_steps, stride, observe)
        final = Ensemble(
            theta=y[:n], momentum=y[n : 2 * n], probe=complex(y[2 * n], y[2 * n + 1]), tau=state.tau + n_steps * dt
        )
        return Trajectory(TRAJECTORY_COLUMNS, rows, final)

    if isinstance(state, VelocityGroupState):
        m = state.momentum.size
        y0 = np.concatenate([state.B, state.Pi, [state.probe]])
        f = _group_vector_rhs(c, state)

        def observe(step, y):
            a = y[2 * m]
            b = y[:m].sum()
            return (state.tau + step * dt, a.real, a.imag, abs(a), b.real, b.imag, np.nan)

        rows, y = run_rk4(f, y0, dt, n_steps, stride, observe)
        final = VelocityGroupState(
            momentum=state.momentum,
            weight=state.weight,
            B=y[:m],
            Pi=y[m : 2 * m],
            probe=complex(y[2 * m]),
            tau=state.tau + n_steps * dt,
        )
        return Trajectory(TRAJECTORY_COLUMNS, rows.real, final)

    raise TypeError(f"cannot integrate {type(state).__name__}")


# --------------------------------------------------------------------------
# growth-rate extraction


@dataclass(frozen=True)
class GrowthFit:
    rate: float
    rms_residual: float
    n_points: int
    e_foldings: float


def fit_growth_rate(
    series,
    transient_factor: float = 10.0,
    ceiling: float | None = None,
    min_efoldings: float = 3.0,
    max_rms: float = 0.02,
) -> GrowthFit:
    """Least-squares slope of ln|A| against tau.

    ``series`` is a sequence of (tau, |A|) pairs.  Samples before |A| first
    exceeds ``transient_factor`` times its initial value are discarded, as
    are samples after |A| first reaches ``ceiling``.

    Raises
    ------
    NoExponentialRegime
        If fewer than ``min_efoldings`` e-foldings remain or ln|A| is not
        straight to within ``max_rms``.
    """
    arr = np.asarray(series, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("series must be a sequence of (tau, |A|) pairs")
    tau, amp = arr[:, 0], arr[:, 1]
    if np.any(amp <= 0):
        raise NoExponentialRegime("no exponential regime detected: nonpositive amplitude")
    above = np.nonzero(amp > transient_factor * amp[0])[0]
    if above.size == 0:
        raise NoExponentialRegime("no exponential regime detected: amplitude never left the transient")
    start = above[0]
    stop = amp.size
    if ceiling is not None:
        hit = np.nonzero(amp >= ceiling)[0]
        if hit.size:
            stop = hit[0] + 1
    t, y = tau[start:stop], np.log(amp[start:stop])
    if t.size < 3 or y.max() - y.min() < min_efoldings:
        raise NoExponentialRegime(
            f"no exponential regime detected: {max(0.0, y.max() - y.min()):.2f} e-foldings after the transient"
        )
    slope, intercept = np.polyfit(t, y, 1)
    rms = float(np.sqrt(np.mean((y - (slope * t + intercept)) ** 2)))
    if rms > max_rms:
        raise NoExponentialRegime(f"no exponential regime detected: ln|A| rms deviation {rms:.3g}")
    return GrowthFit(rate=float(slope), rms_residual=rms, n_points=int(t.size), e_foldings=float(y.max() - y.min()))
