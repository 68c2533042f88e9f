"""Physical parameters, dimensionless control parameters and thermal statistics.

Inputs are SI scalars; everything downstream works with the dimensionless
pair (Delta, alpha), time tau = 4 omega_r t and momenta in units of hbar k0.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from enum import Enum
from typing import Union

import numpy as np
from scipy import constants

HBAR = constants.hbar
K_B = constants.k

# |omega - omega0| must exceed every other rate by this factor before
# adiabatic elimination of the optical coherence is considered safe.
ADIABATIC_MARGIN = 10.0


class ParameterError(ValueError):
    """Raised for physically meaningless or degenerate parameter sets."""


@dataclass(frozen=True)
class PhysicalParams:
    """SI parameters of a CARL configuration.

    ``k1`` and ``k2`` are signed wavevector components along the cavity axis
    (counter-propagating pump and probe have opposite signs), so that
    ``k0 = (k1 - k2) / 2`` is the grating half-wavenumber.
    """

    m: float
    k1: float
    k2: float
    omega0: float
    omega1: float
    omega2: float
    g1: complex
    g2: complex
    N: int
    a2_0: complex

    def __post_init__(self):
        if not self.m > 0:
            raise ParameterError("atomic mass must be positive")
        if self.k1 == 0 or self.k2 == 0:
            raise ParameterError("probe and pump wavenumbers must be nonzero")
        if int(self.N) != self.N or self.N < 1:
            raise ParameterError("atom number N must be an integer >= 1")
        for name in ("m", "k1", "k2", "omega0", "omega1", "omega2"):
            if not math.isfinite(getattr(self, name)):
                raise ParameterError(f"{name} must be finite")

    @property
    def k0(self) -> float:
        return 0.5 * (self.k1 - self.k2)


@dataclass(frozen=True)
class ControlParams:
    """Dimensionless pump-probe detuning ``delta`` and coupling ``alpha``."""

    delta: float
    alpha: float

    def __post_init__(self):
        if not (math.isfinite(self.delta) and math.isfinite(self.alpha)):
            raise ParameterError("control parameters must be finite")
        if self.alpha < 0:
            raise ParameterError("alpha must be nonnegative")


@dataclass(frozen=True)
class ZeroTemperature:
    """Atoms initially at rest: f(k) is a Dirac delta at k = 0."""

    def __str__(self):
        return "zero"


@dataclass(frozen=True)
class FiniteTemperature:
    """Maxwell-Boltzmann gas with ``beta**2 = T_R / T``."""

    beta: float

    def __post_init__(self):
        if not (self.beta > 0 and math.isfinite(self.beta)):
            raise ParameterError("beta must be positive and finite")

    @classmethod
    def from_temperature_ratio(cls, t_over_tr: float) -> "FiniteTemperature":
        """Build from T / T_R."""
        if not t_over_tr > 0:
            raise ParameterError("temperature ratio T/T_R must be positive")
        return cls(1.0 / math.sqrt(t_over_tr))

    @property
    def temperature_ratio(self) -> float:
        return 1.0 / self.beta**2

    def __str__(self):
        return f"T/T_R={self.temperature_ratio:.6g}"


ThermalSpec = Union[ZeroTemperature, FiniteTemperature]
ZERO = ZeroTemperature()


class DetuningBranch(Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"


@dataclass(frozen=True)
class PulledFrequency:
    """Self-consistent pump frequency with its detuning branch.

    ``detuning`` is ``omega - omega0`` computed without cancellation.
    """

    omega: float
    branch: DetuningBranch
    detuning: float


def pulled_frequency(p: PhysicalParams) -> PulledFrequency:
    """Pump frequency shifted by frequency pulling.

    Solves ``omega - N|g2|^2/(omega - omega0) - omega2 = 0`` on the branch
    that reduces to ``omega2`` when ``N -> 0``.

    Raises
    ------
    ParameterError
        If the pump is exactly resonant (``omega2 == omega0``).
    """
    d = p.omega2 - p.omega0
    if d == 0:
        raise ParameterError("pump resonant with the atoms: detuning branch undefined")
    coupling = p.N * abs(p.g2) ** 2
    # both roots of x^2 - d x - N|g2|^2 = 0 for x = omega - omega0; take the
    # one with the sign of d, evaluated as a sum of like-signed terms
    sign = 1.0 if d > 0 else -1.0
    x = 0.5 * (d + sign * math.sqrt(d * d + 4.0 * coupling))
    omega = p.omega2 + coupling / x
    branch = DetuningBranch.POSITIVE if d > 0 else DetuningBranch.NEGATIVE
    return PulledFrequency(omega=omega, branch=branch, detuning=x)


def recoil_frequency(p: PhysicalParams) -> float:
    """omega_r = hbar k0^2 / 2m in rad/s."""
    if p.k1 == p.k2:
        raise ParameterError("k1 == k2: recoil frequency vanishes")
    return HBAR * p.k0**2 / (2.0 * p.m)


def recoil_temperature(p: PhysicalParams) -> float:
    """T_R = hbar omega_r / k_B in kelvin."""
    return HBAR * recoil_frequency(p) / K_B


def _check_adiabatic(p: PhysicalParams, detuning: float, wr: float):
    rates = {
        "pump Rabi rate |g2 a2(0)|": abs(p.g2 * p.a2_0),
        "collective probe coupling sqrt(N)|g1|": math.sqrt(p.N) * abs(p.g1),
        "grating recoil rate 4 omega_r": 4.0 * wr,
    }
    for name, rate in rates.items():
        if abs(detuning) < ADIABATIC_MARGIN * rate:
            warnings.warn(
                f"|omega - omega0| = {abs(detuning):.3g} rad/s does not dominate the "
                f"{name} = {rate:.3g} rad/s; adiabatic elimination is questionable",
                stacklevel=3,
            )


def derive_control_params(p: PhysicalParams) -> ControlParams:
    """Dimensionless (Delta, alpha) from SI parameters.

    ``Delta = delta1 / (4 omega_r)`` with
    ``delta1 = omega - omega1 - N|g1|^2/(omega - omega0)`` and
    ``alpha = N|g1|^2 |g2|^2 |a2(0)|^2 / (8 omega_r^2 (omega - omega0)^2)``.
    """
    pulled = pulled_frequency(p)
    wr = recoil_frequency(p)
    x = pulled.detuning
    _check_adiabatic(p, x, wr)
    delta1 = pulled.omega - p.omega1 - p.N * abs(p.g1) ** 2 / x
    alpha = p.N * abs(p.g1) ** 2 * abs(p.g2) ** 2 * abs(p.a2_0) ** 2 / (8.0 * wr**2 * x**2)
    return ControlParams(delta=delta1 / (4.0 * wr), alpha=alpha)


def maxwell_boltzmann_pdf(k, t: ThermalSpec):
    """Normalised thermal distribution of the dimensionless wavenumber.

    ``f(k) = (2 beta / sqrt(pi)) exp(-4 k^2 beta^2)``; the momentum
    ``P = 2k`` then has variance ``1 / (2 beta^2)``.
    """
    if not isinstance(t, FiniteTemperature):
        raise ParameterError("zero temperature has no density; use the delta-distribution path")
    k = np.asarray(k, dtype=float)
    out = (2.0 * t.beta / math.sqrt(math.pi)) * np.exp(-4.0 * k**2 * t.beta**2)
    return out if out.ndim else float(out)


def momentum_std(t: ThermalSpec) -> float:
    """Standard deviation of P = p / hbar k0."""
    if isinstance(t, ZeroTemperature):
        return 0.0
    return 1.0 / (t.beta * math.sqrt(2.0))


def sample_momenta(n: int, t: ThermalSpec, seed: int) -> np.ndarray:
    """Draw ``n`` dimensionless momenta P from the thermal distribution.

    The stream depends only on ``seed`` (PCG64 through a SeedSequence).
    """
    if n < 1:
        raise ParameterError("need at least one sample")
    if isinstance(t, ZeroTemperature):
        return np.zeros(n)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))
    return rng.normal(0.0, momentum_std(t), size=n)
