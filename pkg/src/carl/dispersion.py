"""Characteristic equations of the CARL and their unstable roots.

Both models reduce, in the linear regime, to ``F(s) = s - i Delta - i alpha K(s)``
where ``K`` is a thermal average of the free response of one velocity group:

* ray optics:  ``K_R(s) = int_0^inf p exp(-p^2/4beta^2 - p s) dp``
* wave optics: ``K_W(s) = int_0^inf exp(-p^2/4beta^2 - p s) sin(p) dp``

A root with ``Re(s) > 0`` is an exponentially growing probe; its real part
is the growth rate ``Gamma``.  At zero temperature ``F`` becomes a cubic.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from enum import Enum
from functools import partial
from typing import Optional, Sequence

import numpy as np
from scipy import integrate

from .params import ControlParams, FiniteTemperature, ThermalSpec, ZeroTemperature
from .specfun import SQRT_PI, erfcx_complex, erfcx_derivative, sqrtpi_z_erfcx_complement


class Model(str, Enum):
    RAO = "rao"
    WAO = "wao"


class SeedOrigin(Enum):
    CUBIC_ROOT = "cubic_root"
    CONTINUATION = "continuation"
    GRID_SCAN = "grid_scan"


class DomainError(ValueError):
    """A quadrature oracle was asked for a point where its integral diverges."""


class RootFindingError(RuntimeError):
    """Root search failed although the argument principle reports roots."""

    def __init__(self, message, delta=None, alpha=None):
        super().__init__(message)
        self.delta = delta
        self.alpha = alpha


@dataclass(frozen=True)
class GrowthResult:
    s: complex
    residual: float
    iterations: int
    seed_origin: SeedOrigin

    @property
    def gamma(self) -> float:
        return self.s.real


@dataclass(frozen=True)
class SweepCurve:
    model: Model
    alpha: float
    thermal: ThermalSpec
    points: tuple  # ((delta, gamma | None), ...)
    roots: tuple = ()  # matching GrowthResult | None

    @property
    def deltas(self) -> np.ndarray:
        return np.array([d for d, _ in self.points])

    @property
    def gammas(self) -> np.ndarray:
        """Growth rates with NaN where the system is stable."""
        return np.array([np.nan if g is None else g for _, g in self.points])


@dataclass(frozen=True)
class StabilityMap:
    model: Model
    thermal: ThermalSpec
    delta_grid: np.ndarray
    alpha_grid: np.ndarray
    unstable: np.ndarray  # bool, shape (len(delta_grid), len(alpha_grid))
    gamma: np.ndarray  # 0 where stable


# --------------------------------------------------------------------------
# characteristic functions


def _rao_kernel(s, beta):
    # K_R = 2 beta^2 (1 - sqrt(pi) b erfcx(b)), b = beta s
    return 2.0 * beta**2 * sqrtpi_z_erfcx_complement(beta * np.asarray(s, dtype=complex))


def _wao_kernel(s, beta):
    s = np.asarray(s, dtype=complex)
    return (SQRT_PI * beta / 2.0j) * (
        erfcx_complex(beta * (s - 1j)) - erfcx_complex(beta * (s + 1j))
    )


def rao_char_residual(s, c: ControlParams, beta: float):
    """Ray-optics characteristic function at finite temperature.

    ``s - i Delta - 2 i alpha beta^2 + 2 i sqrt(pi) alpha beta^3 s erfcx(beta s)``,
    evaluated through ``1 - sqrt(pi) b erfcx(b)`` to avoid cancellation
    for cold gases.
    """
    _check_beta(beta)
    return s - 1j * c.delta - 1j * c.alpha * _rao_kernel(s, beta)


def wao_char_residual(s, c: ControlParams, beta: float):
    """Wave-optics characteristic function at finite temperature.

    ``s - i Delta + (sqrt(pi)/2) alpha beta [erfcx(beta(s+i)) - erfcx(beta(s-i))]``.
    """
    _check_beta(beta)
    return s - 1j * c.delta - 1j * c.alpha * _wao_kernel(s, beta)


def _rao_char_derivative(s, c, beta):
    b = beta * s
    dh = 2.0 * b - SQRT_PI * (1.0 + 2.0 * b * b) * erfcx_complex(b)
    return 1.0 - 2j * c.alpha * beta**3 * dh


def _wao_char_derivative(s, c, beta):
    d = erfcx_derivative(beta * (s + 1j)) - erfcx_derivative(beta * (s - 1j))
    return 1.0 + 0.5 * SQRT_PI * c.alpha * beta**2 * d


def _check_beta(beta):
    if not beta > 0:
        raise ValueError("beta must be positive")


def _quadrature(weight, s, beta):
    s = complex(s)
    if not s.real > 0:
        raise DomainError("quadrature form needs Re(s) > 0")
    # exp(-p^2/4beta^2) < 1e-21 beyond this point
    upper = 2.0 * beta * 7.0

    def re(p):
        return (weight(p) * np.exp(-p * p / (4 * beta * beta) - p * s)).real

    def im(p):
        return (weight(p) * np.exp(-p * p / (4 * beta * beta) - p * s)).imag

    opts = dict(epsabs=1e-12, epsrel=1e-12, limit=400)
    return integrate.quad(re, 0.0, upper, **opts)[0] + 1j * integrate.quad(im, 0.0, upper, **opts)[0]


def rao_char_quadrature(s, c: ControlParams, beta: float) -> complex:
    """Test oracle: ray-optics characteristic function by direct quadrature."""
    _check_beta(beta)
    return s - 1j * c.delta - 1j * c.alpha * _quadrature(lambda p: p, s, beta)


def wao_char_quadrature(s, c: ControlParams, beta: float) -> complex:
    """Test oracle: wave-optics characteristic function by direct quadrature."""
    _check_beta(beta)
    return s - 1j * c.delta - 1j * c.alpha * _quadrature(np.sin, s, beta)


def _cubic_coefficients(model: Model, c: ControlParams):
    if model == Model.RAO:
        return np.array([1.0, -1j * c.delta, 0.0, -1j * c.alpha])
    return np.array([1.0, -1j * c.delta, 1.0, -1j * (c.alpha + c.delta)])


def cubic_residual(model: Model, s, c: ControlParams):
    """Cold-beam cubic evaluated at ``s``."""
    return np.polyval(_cubic_coefficients(model, c), s)


def char_residual(model: Model, s, c: ControlParams, thermal: ThermalSpec):
    """Residual whose zeros are the characteristic exponents."""
    if isinstance(thermal, ZeroTemperature):
        return cubic_residual(model, s, c)
    if model == Model.RAO:
        return rao_char_residual(s, c, thermal.beta)
    return wao_char_residual(s, c, thermal.beta)


def _char_derivative(model, s, c, thermal):
    if isinstance(thermal, ZeroTemperature):
        return np.polyval(np.polyder(_cubic_coefficients(model, c)), s)
    if model == Model.RAO:
        return _rao_char_derivative(s, c, thermal.beta)
    return _wao_char_derivative(s, c, thermal.beta)


# --------------------------------------------------------------------------
# zero temperature: cubics, thresholds and closed forms


def zero_t_cubic(model: Model, c: ControlParams) -> np.ndarray:
    """All three roots of the cold-beam cubic, sorted by descending Re."""
    coefs = _cubic_coefficients(Model(model), c)
    deriv = np.polyder(coefs)
    roots = np.roots(coefs).astype(complex)
    if roots.size < 3:
        roots = np.concatenate([roots, np.zeros(3 - roots.size, dtype=complex)])
    for i, r in enumerate(roots):
        # polish: np.roots goes through an eigenvalue problem
        for _ in range(3):
            d = np.polyval(deriv, r)
            if d == 0:
                break
            step = np.polyval(coefs, r) / d
            if not np.isfinite(step) or abs(step) > 1e-6 * max(1.0, abs(r)):
                break
            r = r - step
        roots[i] = r
    return roots[np.argsort(-roots.real, kind="stable")]


def threshold(model: Model, delta: float) -> float:
    """Critical alpha above which the zero-temperature system is unstable."""
    if Model(model) == Model.RAO:
        return max(0.0, 4.0 * delta**3 / 27.0)
    value = (2.0 / 27.0) * ((3.0 + delta**2) ** 1.5 - 9.0 * delta + delta**3)
    return max(0.0, value)


def gamma_closed_form(model: Model, c: ControlParams) -> Optional[float]:
    """Closed-form zero-temperature growth rate, ``None`` at or below threshold."""
    model = Model(model)
    a, d = c.alpha, c.delta
    if a <= threshold(model, d):
        return None
    if model == Model.RAO:
        root_c = math.sqrt(max(0.0, 1.0 - 4.0 * d**3 / (27.0 * a)))
        upper = np.cbrt((1.0 + root_c) ** 2)
        lower = np.cbrt((1.0 - root_c) ** 2)
    else:
        k = 4.0 / (27.0 * a * a) * (1.0 - d * d) ** 2
        disc = 1.0 + 4.0 * d / (3.0 * a) * (1.0 - d * d / 9.0) - k
        root_d = math.sqrt(max(0.0, disc))
        upper = np.cbrt((1.0 + root_d) ** 2 + k)
        lower = np.cbrt((1.0 - root_d) ** 2 + k)
    return float(math.sqrt(3.0) / 2.0 * np.cbrt(a / 4.0) * abs(upper - lower))


# --------------------------------------------------------------------------
# root search


@dataclass(frozen=True)
class RootSearch:
    """Knobs of :func:`find_unstable_root`.

    ``im_half_width`` overrides the Im(s) window of the counting box; by
    default it is the a-priori bound ``|s - i Delta| <= 2 alpha beta^2``
    that every root with Re(s) > 0 satisfies.
    """

    re_min: float = 1e-8
    residual_tol: float = 1e-10
    max_newton: int = 80
    continuation_beta_start: float = 20.0
    continuation_steps: int = 20
    im_half_width: Optional[float] = None
    max_subdivision_depth: int = 14


def _newton(model, c, thermal, s0, cfg: RootSearch):
    """Damped complex Newton; returns (s, |F|, iterations) or None."""
    s = complex(s0)
    try:
        f = complex(char_residual(model, s, c, thermal))
    except (OverflowError, ValueError):
        return None
    for it in range(1, cfg.max_newton + 1):
        try:
            fp = complex(_char_derivative(model, s, c, thermal))
        except (OverflowError, ValueError):
            return None
        if fp == 0 or not np.isfinite(fp):
            return None
        step = f / fp
        lam = 1.0
        for _ in range(30):
            trial = s - lam * step
            try:
                ft = complex(char_residual(model, trial, c, thermal))
            except (OverflowError, ValueError):
                ft = complex(np.inf)
            if np.isfinite(ft) and abs(ft) < abs(f) or abs(ft) <= cfg.residual_tol:
                break
            lam *= 0.5
        else:
            return None
        s, f = trial, ft
        if abs(f) <= cfg.residual_tol and abs(lam * step) <= 1e-9 * max(1.0, abs(s)):
            return s, abs(f), it
        if abs(lam * step) <= 1e-15 * max(1.0, abs(s)):
            break
    if abs(f) <= cfg.residual_tol:
        return s, abs(f), cfg.max_newton
    return None


def _root_bounds(c: ControlParams, beta: float, cfg: RootSearch):
    """Rectangle containing every root with Re(s) >= re_min."""
    bound = 2.0 * c.alpha * beta**2
    re_max = min(bound, np.cbrt(c.alpha)) * 1.05 + 1e-3
    half = cfg.im_half_width if cfg.im_half_width is not None else bound * 1.05 + 1e-3
    return cfg.re_min, re_max, c.delta - half, c.delta + half


def _winding_number(func, x0, x1, y0, y1, dfunc=None, n_start=64, max_points=200_000):
    """Zeros of ``func`` inside the rectangle via the argument principle.

    An interval is refined while its phase step exceeds 0.5 rad or, when
    ``dfunc`` (the derivative) is given, while ``h |f'/f|`` at either end
    exceeds 1; the second test catches pairs of near-contour zeros whose
    phase steps cancel modulo 2 pi.  Returns None when a zero sits too
    close to the contour to count reliably.
    """
    corners = [complex(x0, y0), complex(x1, y0), complex(x1, y1), complex(x0, y1)]

    def evaluate(z):
        v = func(z)
        if dfunc is None:
            return v, np.zeros(np.shape(z))
        return v, np.abs(dfunc(z) / v)

    total = 0.0
    for a, b in zip(corners, corners[1:] + corners[:1]):
        length = abs(b - a)
        t = np.linspace(0.0, 1.0, n_start + 1)
        vals, logd = evaluate(a + (b - a) * t)
        while True:
            if not (np.all(np.isfinite(vals)) and np.all(np.isfinite(logd))):
                return None
            dphi = np.angle(vals[1:] / vals[:-1])
            h = length * np.diff(t)
            bad = (np.abs(dphi) > 0.5) | (h * np.maximum(logd[1:], logd[:-1]) > 1.0)
            if not np.any(bad):
                break
            if t.size > max_points:
                return None
            mids = 0.5 * (t[:-1][bad] + t[1:][bad])
            if np.min(np.diff(t)) < 1e-13:
                return None
            t_new = np.sort(np.concatenate([t, mids]))
            mask = np.isin(t_new, mids)
            new_vals = np.empty(t_new.size, dtype=complex)
            new_logd = np.empty(t_new.size)
            new_vals[~mask], new_logd[~mask] = vals, logd
            new_vals[mask], new_logd[mask] = evaluate(a + (b - a) * t_new[mask])
            t, vals, logd = t_new, new_vals, new_logd
        total += dphi.sum()
    winding = total / (2.0 * math.pi)
    n = round(winding)
    if abs(winding - n) > 0.05:
        return None
    return int(n)


def _count_roots(model, c, thermal, box):
    func = partial(char_residual, model, c=c, thermal=thermal)
    dfunc = partial(_char_derivative, model, c=c, thermal=thermal)
    x0, x1, y0, y1 = box
    for shrink in (1.0, 1.7, 3.1):
        n = _winding_number(func, x0 * shrink, x1, y0, y1, dfunc)
        if n is not None:
            return n
    return None


def _inside(s, box):
    x0, x1, y0, y1 = box
    return x0 <= s.real <= x1 and y0 <= s.imag <= y1


def _add_root(found, s, res, it, origin, cfg):
    if s.real <= cfg.re_min:
        return
    for r in found:
        if abs(r.s - s) <= 1e-7 * max(1.0, abs(s)):
            return
    found.append(GrowthResult(s=complex(s), residual=float(res), iterations=int(it), seed_origin=origin))


def _continuation(model, c, beta, cfg, found):
    """Follow cold-beam cubic roots from a cold gas up to the target temperature."""
    start = max(cfg.continuation_beta_start, 4.0 * beta)
    if start <= beta:
        return
    cubic = [r for r in zero_t_cubic(model, c) if r.real > cfg.re_min]
    for s in cubic:
        # geometric ladder start -> beta, halving the step when Newton fails
        log_b, log_target = math.log(start), math.log(beta)
        step = (log_b - log_target) / cfg.continuation_steps
        s_cur = complex(s)
        total_it = 0
        ok = True
        first = True
        while ok and (first or log_b > log_target + 1e-12):
            nxt = log_b if first else max(log_target, log_b - step)
            sol = _newton(model, c, FiniteTemperature(math.exp(nxt)), s_cur, cfg)
            if sol is None:
                if first or step < 1e-4:
                    ok = False
                    break
                step *= 0.5
                continue
            s_cur, res, it = sol
            total_it += it
            log_b = nxt
            first = False
        if ok:
            _add_root(found, s_cur, res, total_it, SeedOrigin.CONTINUATION, cfg)


def _subdivide(model, c, thermal, box, count, cfg, found, depth=0):
    """Isolate roots by recursive bisection of the counting box."""
    if count == 0:
        return
    x0, x1, y0, y1 = box
    known = [r for r in found if _inside(r.s, box)]
    if len(known) >= count:
        return
    if count == 1 or depth >= cfg.max_subdivision_depth:
        seeds = [complex(0.5 * (x0 + x1), 0.5 * (y0 + y1))]
        seeds += [complex(x, y) for x in np.linspace(x0, x1, 5)[1:-1] for y in np.linspace(y0, y1, 5)[1:-1]]
        for seed in seeds:
            sol = _newton(model, c, thermal, seed, cfg)
            if sol is not None and _inside(sol[0], box):
                _add_root(found, *sol, SeedOrigin.GRID_SCAN, cfg)
                if len([r for r in found if _inside(r.s, box)]) >= count:
                    return
        if depth >= cfg.max_subdivision_depth:
            return
    # split along the longer side
    if (x1 - x0) >= (y1 - y0):
        xm = 0.5 * (x0 + x1)
        halves = [(x0, xm, y0, y1), (xm, x1, y0, y1)]
    else:
        ym = 0.5 * (y0 + y1)
        halves = [(x0, x1, y0, ym), (x0, x1, ym, y1)]
    for sub in halves:
        n = _count_roots(model, c, thermal, sub)
        if n is None:
            # root on the shared edge: nudge the split
            n = count
        _subdivide(model, c, thermal, sub, n, cfg, found, depth + 1)


def find_unstable_root(
    model: Model,
    c: ControlParams,
    thermal: ThermalSpec,
    guess: Optional[complex] = None,
    search: RootSearch = RootSearch(),
) -> Optional[GrowthResult]:
    """Characteristic exponent with the largest positive real part.

    Returns ``None`` when no root has ``Re(s) > search.re_min``.

    At zero temperature the cubic is solved directly.  At finite temperature
    Newton iterations start from ``guess``, the cubic roots and a weak-coupling
    estimate; the roots found are checked against an argument-principle count
    over a box that provably contains every unstable root; missing roots are
    chased by continuation in beta from a cold gas and finally by recursive
    subdivision of the box.

    Raises
    ------
    RootFindingError
        If roots are counted but cannot be located.
    """
    model = Model(model)
    cfg = search
    if c.alpha == 0:
        return None
    if isinstance(thermal, ZeroTemperature):
        roots = zero_t_cubic(model, c)
        s = roots[0]
        if s.real <= cfg.re_min:
            return None
        res = abs(cubic_residual(model, s, c))
        return GrowthResult(s=complex(s), residual=float(res), iterations=0, seed_origin=SeedOrigin.CUBIC_ROOT)

    beta = thermal.beta
    found: list[GrowthResult] = []
    seeds = []
    if guess is not None:
        seeds.append((complex(guess), SeedOrigin.CONTINUATION))
    seeds += [(complex(r), SeedOrigin.CUBIC_ROOT) for r in zero_t_cubic(model, c)]
    # weak-coupling estimate: a few fixed-point sweeps of s = i Delta + i alpha K(s)
    kernel = _rao_kernel if model == Model.RAO else _wao_kernel
    s_fp = complex(1e-3, c.delta)
    for _ in range(4):
        s_fp = 1j * c.delta + 1j * c.alpha * complex(kernel(complex(max(s_fp.real, 1e-3), s_fp.imag), beta))
    seeds.append((s_fp + 1e-3, SeedOrigin.CUBIC_ROOT))
    for seed, origin in seeds:
        sol = _newton(model, c, thermal, seed, cfg)
        if sol is not None:
            _add_root(found, *sol, origin, cfg)

    box = _root_bounds(c, beta, cfg)
    count = _count_roots(model, c, thermal, box)
    if count is None:
        raise RootFindingError("argument-principle count failed (root on the contour)", c.delta, c.alpha)
    in_box = [r for r in found if _inside(r.s, box)]
    if len(in_box) < count:
        _continuation(model, c, beta, cfg, found)
        in_box = [r for r in found if _inside(r.s, box)]
    if len(in_box) < count:
        _subdivide(model, c, thermal, box, count, cfg, found)
        in_box = [r for r in found if _inside(r.s, box)]
    if len(in_box) < count:
        raise RootFindingError(
            f"{count} unstable root(s) counted, {len(in_box)} located", c.delta, c.alpha
        )
    if not in_box:
        return None
    return max(in_box, key=lambda r: r.s.real)


# --------------------------------------------------------------------------
# sweeps and maps


def sweep_growth_rate(
    model: Model,
    alpha: float,
    thermal: ThermalSpec,
    delta_range: tuple,
    n_points: int,
    search: RootSearch = RootSearch(),
) -> SweepCurve:
    """Growth rate along a Delta line, warm-starting each point from its neighbour."""
    if n_points < 2:
        raise ValueError("n_points must be >= 2")
    model = Model(model)
    deltas = np.linspace(delta_range[0], delta_range[1], n_points)
    points, roots = [], []
    guess = None
    for d in deltas:
        try:
            r = find_unstable_root(model, ControlParams(float(d), alpha), thermal, guess=guess, search=search)
        except RootFindingError as exc:
            raise RootFindingError(f"Delta={d:.17g}: {exc}", float(d), alpha) from exc
        guess = None if r is None else r.s + 1j * (deltas[1] - deltas[0])
        points.append((float(d), None if r is None else r.gamma))
        roots.append(r)
    return SweepCurve(model=model, alpha=alpha, thermal=thermal, points=tuple(points), roots=tuple(roots))


def _map_row(model, thermal, alpha_grid, search, delta):
    row = []
    guess = None
    for a in alpha_grid:
        r = find_unstable_root(model, ControlParams(float(delta), float(a)), thermal, guess=guess, search=search)
        guess = None if r is None else r.s
        row.append(0.0 if r is None else r.gamma)
    return row


def stability_map(
    model: Model,
    thermal: ThermalSpec,
    delta_grid: Sequence[float],
    alpha_grid: Sequence[float],
    workers: int = 1,
    search: RootSearch = RootSearch(),
) -> StabilityMap:
    """Unstable region on a (Delta, alpha) grid; rows follow ``delta_grid``."""
    model = Model(model)
    delta_grid = np.asarray(delta_grid, dtype=float)
    alpha_grid = np.asarray(alpha_grid, dtype=float)
    for g in (delta_grid, alpha_grid):
        if g.ndim != 1 or g.size < 1 or np.any(np.diff(g) <= 0):
            raise ValueError("grids must be strictly increasing 1-d arrays")
    job = partial(_map_row, model, thermal, alpha_grid, search)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(job, delta_grid.tolist(), chunksize=max(1, delta_grid.size // (4 * workers))))
    else:
        rows = [job(d) for d in delta_grid.tolist()]
    gamma = np.array(rows, dtype=float)
    return StabilityMap(
        model=model,
        thermal=thermal,
        delta_grid=delta_grid,
        alpha_grid=alpha_grid,
        unstable=gamma > 0,
        gamma=gamma,
    )
