"""Command-line front end.

Every command takes ``--config FILE`` with ``key = value`` lines plus one
flag per key; flags win over the file, which wins over built-in defaults.
CSV outputs start with a ``# key = value`` block holding the fully resolved
configuration, so ``carl <command> --config out.csv`` regenerates the file.

Exit codes: 0 success, 1 configuration error, 2 numerical diagnostic.
"""

from __future__ import annotations

import argparse
import io
import math
import os
import sys
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import __version__, dispersion, rao, wao
from .dispersion import Model, RootFindingError
from .integrators import IntegrationError
from .params import (
    ZERO,
    ControlParams,
    FiniteTemperature,
    ParameterError,
    PhysicalParams,
    derive_control_params,
    pulled_frequency,
    recoil_frequency,
    recoil_temperature,
)
from .specfun import SpecialFunctionOverflow

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
WORKERS_ENV = "CARL_WORKERS"


class ConfigError(ValueError):
    pass


class NumericalDiagnostic(RuntimeError):
    pass


# --------------------------------------------------------------------------
# value parsing and canonical formatting


def fmt(x) -> str:
    """Lossless text form of a number."""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, complex):
        if x.imag == 0:
            return format(x.real, ".17g")
        return f"{format(x.real, '.17g')}{'+' if x.imag >= 0 else '-'}{format(abs(x.imag), '.17g')}j"
    return format(float(x), ".17g")


def _float(text):
    v = float(text)
    if not math.isfinite(v):
        raise ValueError("must be finite")
    return v


def _complex(text):
    v = complex(str(text).replace(" ", ""))
    if not (math.isfinite(v.real) and math.isfinite(v.imag)):
        raise ValueError("must be finite")
    return v


def _int(text):
    f = float(text)
    if f != int(f):
        raise ValueError("must be an integer")
    return int(f)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("must be true or false")


def _choice(*options):
    def parse(text):
        t = str(text).strip().lower()
        if t not in options:
            raise ValueError(f"must be one of {', '.join(options)}")
        return t

    return parse


def _temp(text):
    """T/T_R as given (0.0 for a gas at rest), kept verbatim for the header."""
    t = str(text).strip().lower()
    if t == "zero":
        return 0.0
    ratio = _float(t)
    if ratio < 0:
        raise ValueError("temperature ratio must be nonnegative")
    return ratio


def thermal(ratio: float):
    return ZERO if ratio == 0 else FiniteTemperature.from_temperature_ratio(ratio)


def _temps(text):
    return tuple(_temp(t) for t in str(text).split(",") if t.strip())


def _fmt_temp(t) -> str:
    return "zero" if t == 0 else fmt(t)


@dataclass(frozen=True)
class Key:
    parse: Callable
    default: object
    help: str
    show: Callable = fmt


K = Key
ALL_KEYS = {
    "model": K(_choice("rao", "wao", "both"), "both", "rao, wao or both", str),
    "temp": K(_temp, 0.0, "temperature T/T_R, or 'zero'", _fmt_temp),
    "temps": K(_temps, (0.0,), "comma list of T/T_R values ('zero' allowed)", lambda v: ",".join(map(_fmt_temp, v))),
    "alpha": K(_float, None, "coupling alpha"),
    "delta": K(_float, None, "single detuning Delta"),
    "delta_min": K(_float, -10.0, "first Delta of the sweep"),
    "delta_max": K(_float, 10.0, "last Delta of the sweep"),
    "n_delta": K(_int, 401, "number of Delta points"),
    "alpha_min": K(_float, 0.01, "first alpha of the map"),
    "alpha_max": K(_float, 2.0, "last alpha of the map"),
    "n_alpha": K(_int, 200, "number of alpha points"),
    "alpha_scale": K(_choice("linear", "log"), "linear", "alpha grid spacing", str),
    "figure": K(_int, 0, "figure preset (sweep: 1 or 2, map: 3); 0 = none"),
    "workers": K(_int, 1, f"process count for sweeps and maps (env {WORKERS_ENV} overrides the file)"),
    "output": K(str, "-", "output path, '-' for stdout", str),
    "dynamics": K(_choice("nonlinear", "linear"), "nonlinear", "full equations or linearised system", str),
    "n": K(_int, 1024, "atoms (nonlinear RAO) or velocity groups (linear RAO)"),
    "dt": K(_float, 1e-3, "RK4 step in tau"),
    "n_steps": K(_int, 10000, "number of RK4 steps"),
    "stride": K(_int, 10, "record every stride steps"),
    "half_width": K(_int, 8, "WAO lattice half-width"),
    "n_families": K(_int, 1, "WAO fractional-momentum families"),
    "seed": K(_int, 0, "random seed"),
    "probe0": K(_complex, 1e-6, "initial probe amplitude A(0)"),
    "quiet_start": K(_bool, True, "uniform initial phases (RAO nonlinear)"),
    "ceiling": K(_float, 1e-3, "stop the growth fit once |A| reaches this"),
    "m": K(_float, None, "atomic mass (kg)"),
    "k1": K(_float, None, "probe wavenumber, signed (1/m)"),
    "k2": K(_float, None, "pump wavenumber, signed (1/m)"),
    "omega0": K(_float, None, "atomic transition frequency (rad/s)"),
    "omega1": K(_float, None, "probe frequency (rad/s)"),
    "omega2": K(_float, None, "pump frequency (rad/s)"),
    "g1": K(_complex, None, "probe coupling (rad/s)"),
    "g2": K(_complex, None, "pump coupling (rad/s)"),
    "N": K(_int, None, "atom number"),
    "a2_0": K(_complex, None, "initial pump amplitude"),
}

COMMAND_KEYS = {
    "sweep": ("model", "alpha", "temps", "delta", "delta_min", "delta_max", "n_delta", "figure", "workers", "output"),
    "map": (
        "model", "temp", "delta_min", "delta_max", "n_delta", "alpha_min", "alpha_max", "n_alpha",
        "alpha_scale", "figure", "workers", "output",
    ),
    "simulate": (
        "model", "dynamics", "temp", "delta", "alpha", "n", "dt", "n_steps", "stride", "half_width",
        "n_families", "seed", "probe0", "quiet_start", "ceiling", "output",
    ),
    "derive": ("m", "k1", "k2", "omega0", "omega1", "omega2", "g1", "g2", "N", "a2_0"),
    "zerot": ("alpha", "delta_min", "delta_max", "n_delta", "output"),
}

SWEEP_FIGURES = {
    1: {"alpha": 10.0, "temps": "zero,1,10,100", "delta_min": -10.0, "delta_max": 10.0, "n_delta": 401},
    2: {"alpha": 0.1, "temps": "zero,1,10,100", "delta_min": -10.0, "delta_max": 10.0, "n_delta": 401},
}
MAP_FIGURES = {
    3: {
        "temp": "zero", "delta_min": -2.0, "delta_max": 4.0, "n_delta": 200,
        "alpha_min": 0.01, "alpha_max": 2.0, "n_alpha": 200, "alpha_scale": "linear",
    },
}
META_KEYS = ("version", "command")


# --------------------------------------------------------------------------
# configuration


def read_config_text(text: str) -> dict:
    """``key = value`` pairs from a config file or a CSV header.

    Lines may carry a leading ``#``; ``#`` lines without ``=`` are comments.
    Reading stops at the first line that is neither (the CSV column header).
    """
    out = {}
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        body = line[1:].strip() if line.startswith("#") else line
        if "=" not in body:
            if line.startswith("#"):
                continue
            break
        key, value = (s.strip() for s in body.split("=", 1))
        out[key] = value
    return out


def resolve(command: str, file_values: dict, flag_values: dict, env=os.environ) -> dict:
    """Merge defaults, figure preset, config file, environment and flags."""
    allowed = COMMAND_KEYS[command]
    for key in file_values:
        if key not in allowed and key not in META_KEYS:
            raise ConfigError(f"unknown key '{key}' for command '{command}'")
    if "command" in file_values and file_values["command"] != command:
        raise ConfigError(f"config was written by '{file_values['command']}', not '{command}'")
    raw = {k: v for k, v in file_values.items() if k in allowed}
    raw.update({k: v for k, v in flag_values.items() if v is not None})
    if "workers" in allowed and env.get(WORKERS_ENV) and flag_values.get("workers") is None:
        raw["workers"] = env[WORKERS_ENV]

    cfg = {}
    for key in allowed:
        spec = ALL_KEYS[key]
        if key in raw:
            try:
                cfg[key] = spec.parse(raw[key])
            except (ValueError, ParameterError) as exc:
                raise ConfigError(f"{key} = {raw[key]!r}: {exc}") from None
        else:
            cfg[key] = spec.default

    presets = SWEEP_FIGURES if command == "sweep" else MAP_FIGURES if command == "map" else {}
    if cfg.get("figure"):
        if cfg["figure"] not in presets:
            raise ConfigError(f"no figure preset {cfg['figure']} for '{command}'")
        for key, value in presets[cfg["figure"]].items():
            if key not in raw:
                cfg[key] = ALL_KEYS[key].parse(value)
    _validate(command, cfg)
    return cfg


def _require(cfg, *keys):
    missing = [k for k in keys if cfg.get(k) is None]
    if missing:
        raise ConfigError(f"missing required key(s): {', '.join(missing)}")


def _validate(command, cfg):
    if command in ("sweep", "map", "zerot"):
        if cfg["n_delta"] < 1 or cfg["delta_max"] < cfg["delta_min"]:
            raise ConfigError("need n_delta >= 1 and delta_max >= delta_min")
        if cfg["n_delta"] > 1 and cfg["delta_max"] == cfg["delta_min"]:
            raise ConfigError("delta range is empty")
    if command in ("sweep", "map") and cfg["workers"] < 1:
        raise ConfigError("workers must be >= 1")
    if command in ("sweep", "zerot", "simulate"):
        _require(cfg, "alpha")
        if cfg["alpha"] < 0:
            raise ConfigError("alpha must be nonnegative")
    if command == "sweep" and not cfg["temps"]:
        raise ConfigError("temps is empty")
    if command == "map":
        if cfg["n_alpha"] < 1 or cfg["alpha_max"] < cfg["alpha_min"] or cfg["alpha_min"] < 0:
            raise ConfigError("need n_alpha >= 1 and 0 <= alpha_min <= alpha_max")
        if cfg["alpha_scale"] == "log" and cfg["alpha_min"] <= 0:
            raise ConfigError("log alpha grid needs alpha_min > 0")
    if command == "simulate":
        _require(cfg, "delta")
        if cfg["model"] == "both":
            raise ConfigError("simulate needs model = rao or wao")
        for key in ("n", "n_steps", "stride", "half_width", "n_families"):
            if cfg[key] < 1:
                raise ConfigError(f"{key} must be >= 1")
        if cfg["dt"] <= 0:
            raise ConfigError("dt must be positive")
    if command == "derive":
        _require(cfg, *COMMAND_KEYS["derive"])


def header(command: str, cfg: dict) -> str:
    lines = [f"# version = {__version__}", f"# command = {command}"]
    for key in COMMAND_KEYS[command]:
        value = cfg[key]
        if value is None:
            continue
        lines.append(f"# {key} = {ALL_KEYS[key].show(value)}")
    return "\n".join(lines) + "\n"


def _cell(x) -> str:
    return "" if x is None or (isinstance(x, float) and math.isnan(x)) else fmt(x)


def _csv(command, cfg, columns, rows) -> str:
    buf = io.StringIO()
    buf.write(header(command, cfg))
    buf.write(",".join(columns) + "\n")
    for row in rows:
        buf.write(",".join(v if isinstance(v, str) else _cell(v) for v in row) + "\n")
    return buf.getvalue()


def _emit(cfg, text, stdout):
    if cfg["output"] == "-":
        stdout.write(text)
    else:
        with open(cfg["output"], "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


def _models(cfg):
    return [Model.RAO, Model.WAO] if cfg["model"] == "both" else [Model(cfg["model"])]


def _delta_grid(cfg):
    if cfg.get("delta") is not None:
        return np.array([cfg["delta"]])
    return np.linspace(cfg["delta_min"], cfg["delta_max"], cfg["n_delta"])


# --------------------------------------------------------------------------
# commands


def _sweep_one(model, alpha, gas, deltas):
    if deltas.size == 1:
        r = dispersion.find_unstable_root(model, ControlParams(float(deltas[0]), alpha), gas)
        return [None if r is None else r.gamma]
    curve = dispersion.sweep_growth_rate(model, alpha, gas, (deltas[0], deltas[-1]), deltas.size)
    return [g for _, g in curve.points]


def _sweep_job(args):
    return _sweep_one(*args)


def cmd_sweep(cfg, stdout=sys.stdout):
    deltas = _delta_grid(cfg)
    models = _models(cfg)
    jobs = [(m, cfg["alpha"], thermal(t), deltas) for t in cfg["temps"] for m in models]
    if cfg["workers"] > 1 and len(jobs) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=cfg["workers"]) as pool:
            results = list(pool.map(_sweep_job, jobs))
    else:
        results = [_sweep_job(j) for j in jobs]
    multi = len(cfg["temps"]) > 1
    columns = (["temp"] if multi else []) + ["delta"] + [f"gamma_{m.value}" for m in models]
    rows = []
    it = iter(results)
    for t in cfg["temps"]:
        per_model = [next(it) for _ in models]
        for i, d in enumerate(deltas):
            rows.append(([_fmt_temp(t)] if multi else []) + [float(d)] + [g[i] for g in per_model])
    _emit(cfg, _csv("sweep", cfg, columns, rows), stdout)
    return EXIT_OK


def cmd_map(cfg, stdout=sys.stdout):
    deltas = _delta_grid(cfg)
    if cfg["alpha_scale"] == "log":
        alphas = np.geomspace(cfg["alpha_min"], cfg["alpha_max"], cfg["n_alpha"])
    else:
        alphas = np.linspace(cfg["alpha_min"], cfg["alpha_max"], cfg["n_alpha"])
    columns = ["model", "delta", "alpha", "unstable", "gamma", "threshold"]
    rows = []
    for model in _models(cfg):
        smap = dispersion.stability_map(model, thermal(cfg["temp"]), deltas, alphas, workers=cfg["workers"])
        for i, d in enumerate(deltas):
            th = dispersion.threshold(model, float(d))
            for j, a in enumerate(alphas):
                unstable = bool(smap.unstable[i, j])
                rows.append([model.value, float(d), float(a), int(unstable), smap.gamma[i, j] if unstable else None, th])
    _emit(cfg, _csv("map", cfg, columns, rows), stdout)
    return EXIT_OK


def _initial_state(cfg):
    model, gas = Model(cfg["model"]), thermal(cfg["temp"])
    if model is Model.RAO:
        if cfg["dynamics"] == "nonlinear":
            return rao.init_ensemble(cfg["n"], gas, cfg["seed"], cfg["probe0"], cfg["quiet_start"])
        return rao.maxwell_boltzmann_groups(gas, n_groups=cfg["n"], probe0=cfg["probe0"])
    lattice = wao.MomentumLattice.symmetric(cfg["half_width"], cfg["n_families"])
    if cfg["dynamics"] == "nonlinear":
        return wao.init_thermal_density(lattice, gas, cfg["probe0"])
    return wao.init_coherences(lattice, gas, cfg["probe0"])


def simulate(cfg):
    """Run the configured dynamics; returns (trajectory, summary lines)."""
    c = ControlParams(cfg["delta"], cfg["alpha"])
    model = Model(cfg["model"])
    try:
        state = _initial_state(cfg)
    except wao.LatticeTooSmall as exc:
        raise ConfigError(str(exc)) from None
    integrator = rao.integrate if model is Model.RAO else wao.integrate
    traj = integrator(state, c, dt=cfg["dt"], n_steps=cfg["n_steps"], stride=cfg["stride"])
    root = dispersion.find_unstable_root(model, c, thermal(cfg["temp"]))
    predicted = None if root is None else root.gamma
    summary = [f"gamma_dispersion = {'stable' if predicted is None else fmt(predicted)}"]
    try:
        fit = rao.fit_growth_rate(np.c_[traj.column("tau"), traj.column("abs_A")], ceiling=cfg["ceiling"])
    except rao.NoExponentialRegime as exc:
        summary.append(f"gamma_fit = none ({exc})")
    else:
        summary.append(f"gamma_fit = {fmt(fit.rate)}")
        summary.append(f"fit_rms = {fmt(fit.rms_residual)}")
        if predicted:
            summary.append(f"relative_deviation = {fmt(abs(fit.rate - predicted) / predicted)}")
    return traj, summary


def cmd_simulate(cfg, stdout=sys.stdout):
    traj, summary = simulate(cfg)
    _emit(cfg, _csv("simulate", cfg, list(traj.columns), traj.rows.tolist()), stdout)
    out = sys.stderr if cfg["output"] == "-" else stdout
    out.write("\n".join(summary) + "\n")
    return EXIT_OK


def cmd_derive(cfg, stdout=sys.stdout):
    try:
        p = PhysicalParams(**{k: cfg[k] for k in COMMAND_KEYS["derive"]})
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            c = derive_control_params(p)
        pulled = pulled_frequency(p)
        wr, tr = recoil_frequency(p), recoil_temperature(p)
    except ParameterError as exc:
        raise ConfigError(str(exc)) from None
    for w in caught:
        sys.stderr.write(f"warning: {w.message}\n")
    lines = [
        f"delta = {fmt(c.delta)}",
        f"alpha = {fmt(c.alpha)}",
        f"omega_r = {fmt(wr)}",
        f"T_R = {fmt(tr)}",
        f"omega = {fmt(pulled.omega)}",
        f"omega_minus_omega0 = {fmt(pulled.detuning)}",
        f"branch = {pulled.branch.value}",
    ]
    stdout.write("\n".join(lines) + "\n")
    return EXIT_OK


def cmd_zerot(cfg, stdout=sys.stdout):
    columns = ["delta", "threshold_rao", "threshold_wao", "gamma_rao", "gamma_wao"]
    rows = []
    for d in _delta_grid(cfg):
        c = ControlParams(float(d), cfg["alpha"])
        rows.append(
            [
                float(d),
                dispersion.threshold(Model.RAO, float(d)),
                dispersion.threshold(Model.WAO, float(d)),
                dispersion.gamma_closed_form(Model.RAO, c),
                dispersion.gamma_closed_form(Model.WAO, c),
            ]
        )
    _emit(cfg, _csv("zerot", cfg, columns, rows), stdout)
    return EXIT_OK


COMMAND_HELP = {
    "sweep": "growth rate along a Delta line",
    "map": "stable/unstable map over a (Delta, alpha) grid",
    "simulate": "integrate RAO or WAO dynamics and fit the growth rate",
    "derive": "dimensionless parameters from SI inputs",
    "zerot": "zero-temperature thresholds and closed-form growth rates",
}
COMMANDS = {"sweep": cmd_sweep, "map": cmd_map, "simulate": cmd_simulate, "derive": cmd_derive, "zerot": cmd_zerot}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="carl", description="Collective atomic recoil laser: dispersion and dynamics")
    parser.add_argument("--version", action="version", version=f"carl {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name, keys in COMMAND_KEYS.items():
        p = sub.add_parser(name, help=COMMAND_HELP[name])
        p.add_argument("--config", help="key = value file (a previous CSV output also works)")
        for key in keys:
            spec = ALL_KEYS[key]
            default = spec.default if spec.default is not None else "required"
            if isinstance(default, tuple):
                default = ALL_KEYS[key].show(default)
            p.add_argument(f"--{key.replace('_', '-')}", dest=key, default=None, help=f"{spec.help} [{default}]")
    return parser


def main(argv=None, stdout=None) -> int:
    stdout = stdout or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        file_values = {}
        if args.config:
            try:
                with open(args.config, encoding="utf-8") as fh:
                    file_values = read_config_text(fh.read())
            except OSError as exc:
                raise ConfigError(f"cannot read config: {exc}") from None
        flags = {k: getattr(args, k) for k in COMMAND_KEYS[args.command]}
        cfg = resolve(args.command, file_values, flags)
        return COMMANDS[args.command](cfg, stdout=stdout)
    except ConfigError as exc:
        sys.stderr.write(f"carl: config error: {exc}\n")
        return EXIT_CONFIG
    except ParameterError as exc:
        sys.stderr.write(f"carl: config error: {exc}\n")
        return EXIT_CONFIG
    except RootFindingError as exc:
        sys.stderr.write(f"carl: root finder failed at Delta={fmt(exc.delta)}, alpha={fmt(exc.alpha)}: {exc}\n")
        return EXIT_NUMERIC
    except (IntegrationError, SpecialFunctionOverflow, NumericalDiagnostic) as exc:
        sys.stderr.write(f"carl: numerical diagnostic: {exc}\n")
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
