"""Fixed-step classical Runge-Kutta stepping shared by every dynamical model."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


class IntegrationError(RuntimeError):
    """The state became non-finite (or left its validity domain) at ``step``."""

    def __init__(self, message, step):
        super().__init__(f"{message} (step {step})")
        self.step = step


@dataclass
class Trajectory:
    """Recorded observables of a run.

    ``columns`` names the entries of every row in ``rows``; ``final`` is the
    model state after the last step.
    """

    columns: tuple
    rows: np.ndarray
    final: object

    def column(self, name):
        return self.rows[:, self.columns.index(name)]


def rk4_step(f: Callable, y: np.ndarray, dt: float) -> np.ndarray:
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def run_rk4(f, y0, dt, n_steps, stride, observe, check=None):
    """Step ``y' = f(y)`` ``n_steps`` times, recording ``observe(step, y)``.

    Rows are recorded at step 0, every ``stride`` steps and at the final step.
    ``check(step, y)`` may raise to abort a run that left its domain.
    """
    if not dt > 0:
        raise ValueError("dt must be positive")
    if stride < 1:
        raise ValueError("stride must be >= 1")
    y = np.array(y0, copy=True)
    rows = [observe(0, y)]
    for step in range(1, n_steps + 1):
        y = rk4_step(f, y, dt)
        if not np.all(np.isfinite(y)):
            raise IntegrationError("non-finite state", step)
        if check is not None:
            check(step, y)
        if step % stride == 0 or step == n_steps:
            rows.append(observe(step, y))
    return np.array(rows), y
