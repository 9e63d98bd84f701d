"""
Fixed-step and adaptive integration of autonomous vector fields.

The solvers only use ``+``, ``-`` and scalar ``*`` on states, so they work on plain
numpy arrays (data generation) and on diffnum nodes (training) alike. Gradients
flow through unrolled solver steps; dopri5 step-size decisions are computed on plain
values and therefore act as constants.
"""

from __future__ import annotations

import logging
from typing import Callable, List

import numpy as np

from inode_lab.core.exceptions import ConfigError, IntegrationError, StiffnessError
from inode_lab.numerics import diffnum
from inode_lab.numerics.diffnum import ArrayLike, value_of
from inode_lab.schemas.solver import SolverSpec, TimeGrid

logger = logging.getLogger(__name__)

VectorField = Callable[[ArrayLike], ArrayLike]

# Dormand–Prince 5(4) tableau
C2, C3, C4, C5 = 1 / 5, 3 / 10, 4 / 5, 8 / 9
A21 = 1 / 5
A31, A32 = 3 / 40, 9 / 40
A41, A42, A43 = 44 / 45, -56 / 15, 32 / 9
A51, A52, A53, A54 = 19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729
A61, A62, A63, A64, A65 = 9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656
B1, B3, B4, B5, B6 = 35 / 384, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84
# b - b_hat
E1, E3, E4, E5, E6, E7 = 71 / 57600, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40
# continuous extension
D1 = -12715105075 / 11282082432
D3 = 87487479700 / 32700410799
D4 = -10690763975 / 1880347072
D5 = 701980252875 / 199316789632
D6 = -1453857185 / 822651844
D7 = 69997945 / 29380423

SAFETY = 0.9
FACTOR_MIN = 0.2
FACTOR_MAX = 10.0
UNDERFLOW = 1e-12


def _check_finite(k: ArrayLike, t: float) -> ArrayLike:
    if not np.all(np.isfinite(value_of(k))):
        raise IntegrationError("non-finite derivative", time=t)
    return k


def step_euler(f: VectorField, x: ArrayLike, dt: float, t: float = 0.0) -> ArrayLike:
    """x + dt*f(x)"""
    k = _check_finite(f(x), t)
    return x + dt * k


def step_rk4(f: VectorField, x: ArrayLike, dt: float, t: float = 0.0) -> ArrayLike:
    """Classical four-stage Runge–Kutta step."""
    k1 = _check_finite(f(x), t)
    k2 = _check_finite(f(x + 0.5 * dt * k1), t)
    k3 = _check_finite(f(x + 0.5 * dt * k2), t)
    k4 = _check_finite(f(x + dt * k3), t)
    return x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


_FIXED_STEPPERS = {"euler": step_euler, "rk4": step_rk4}


def _substeps(grid_dt: float, step: float) -> int:
    n = int(round(grid_dt / step))
    if n < 1 or abs(n * step - grid_dt) > 1e-9 * grid_dt:
        raise ConfigError(
            f"solver step {step!r} does not divide the grid spacing {grid_dt!r}",
            field="solver.dt",
        )
    return n


def _stack(states: List[ArrayLike]) -> ArrayLike:
    if any(diffnum.is_node(s) for s in states):
        return diffnum.stack(states, axis=0)
    return np.stack([np.asarray(s, dtype=np.float64) for s in states], axis=0)


def integrate(f: VectorField, x0: ArrayLike, grid: TimeGrid, spec: SolverSpec) -> ArrayLike:
    """States at every grid point, stacked along a new leading time axis."""
    if not np.all(np.isfinite(value_of(x0))):
        raise IntegrationError("non-finite initial state", time=grid.t0)
    if spec.kind == "dopri5":
        return _integrate_dopri5(f, x0, grid, spec)

    stepper = _FIXED_STEPPERS[spec.kind]
    n_sub = _substeps(grid.dt, spec.dt if spec.dt is not None else grid.dt)
    h = grid.dt / n_sub

    states: List[ArrayLike] = [x0]
    x = x0
    for i in range(grid.n_points - 1):
        t_i = grid.t0 + i * grid.dt
        for j in range(n_sub):
            x = stepper(f, x, h, t_i + j * h)
        states.append(x)
    return _stack(states)


def _rms_error(err: np.ndarray, x: np.ndarray, x_new: np.ndarray, spec: SolverSpec) -> float:
    scale = spec.atol + spec.rtol * np.maximum(np.abs(x), np.abs(x_new))
    ratio = err / scale
    return float(np.sqrt(np.mean(ratio * ratio)))


def _integrate_dopri5(f: VectorField, x0: ArrayLike, grid: TimeGrid, spec: SolverSpec) -> ArrayLike:
    times = grid.times()
    t_end = float(times[-1])
    span = grid.span
    min_step = UNDERFLOW * span

    states: List[ArrayLike] = [x0]
    next_idx = 1
    t = grid.t0
    x = x0
    k1 = _check_finite(f(x), t)
    h = min(spec.dt if spec.dt is not None else grid.dt, span)
    n_steps = 0
    n_rejected = 0

    while next_idx < grid.n_points:
        if n_steps >= spec.max_steps:
            raise IntegrationError(f"dopri5 exceeded {spec.max_steps} steps", time=t)
        h = min(h, t_end - t)
        if h < min_step:
            raise StiffnessError("dopri5 step size underflow", time=t)
        n_steps += 1

        k2 = f(x + h * (A21 * k1))
        k3 = f(x + h * (A31 * k1 + A32 * k2))
        k4 = f(x + h * (A41 * k1 + A42 * k2 + A43 * k3))
        k5 = f(x + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4))
        k6 = f(x + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5))
        x_new = x + h * (B1 * k1 + B3 * k3 + B4 * k4 + B5 * k5 + B6 * k6)
        k7 = f(x_new)

        kv = [value_of(k) for k in (k1, k3, k4, k5, k6, k7)]
        err_vec = h * (E1 * kv[0] + E3 * kv[1] + E4 * kv[2] + E5 * kv[3] + E6 * kv[4] + E7 * kv[5])
        with np.errstate(over="ignore", invalid="ignore"):
            err = _rms_error(err_vec, value_of(x), value_of(x_new), spec)

        if not np.isfinite(err) or err > 1.0:
            n_rejected += 1
            shrink = FACTOR_MIN if not np.isfinite(err) else max(FACTOR_MIN, SAFETY * err ** -0.2)
            h *= shrink
            continue

        t_new = t + h
        if np.isclose(t_new, t_end, rtol=0.0, atol=UNDERFLOW * max(1.0, span)):
            t_new = t_end
        dense = None
        while next_idx < grid.n_points and times[next_idx] <= t_new + UNDERFLOW * span:
            theta = (times[next_idx] - t) / h
            if theta >= 1.0 - 1e-12:
                states.append(x_new)
            else:
                if dense is None:
                    ydiff = x_new - x
                    bspl = h * k1 - ydiff
                    dense = (
                        ydiff,
                        bspl,
                        ydiff - h * k7 - bspl,
                        h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7),
                    )
                r2, r3, r4, r5 = dense
                theta1 = 1.0 - theta
                states.append(x + theta * (r2 + theta1 * (r3 + theta * (r4 + theta1 * r5))))
            next_idx += 1

        t = t_new
        x = x_new
        k1 = _check_finite(k7, t)
        grow = FACTOR_MAX if err == 0.0 else min(FACTOR_MAX, max(FACTOR_MIN, SAFETY * err ** -0.2))
        h *= grow

    logger.debug("dopri5: %d steps (%d rejected) over span %.4g", n_steps, n_rejected, span)
    return _stack(states)
