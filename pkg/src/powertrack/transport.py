"""Linear advection of injected power along the unit line.

The state z(x, t) obeys z_t + speed * z_x = 0 on (0, 1) with inflow boundary
z(0, t) = u(t) and initial profile z(x, 0) = z0(x).  The outflow y(t) =
z(1, t) therefore reproduces the inflow delayed by the transport time
1/speed.  A left-sided upwind scheme discretises the dynamics; at Courant
number exactly 1 the scheme is an exact shift, which is the default grid
construction.  Sub-unit Courant numbers are supported for convergence
experiments only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "CFLError",
    "Grid",
    "ControlSignal",
    "FieldState",
    "validate_cfl",
    "upwind_solve",
    "exact_shift_output",
]


class CFLError(ValueError):
    """Time step too large for the spatial step; carries the Courant number."""

    def __init__(self, courant: float):
        super().__init__(f"CFL condition violated: Courant number {courant} > 1")
        self.courant = courant


def _near_int(x: float, tol: float = 1e-9) -> int:
    n = round(x)
    if abs(x - n) > tol * max(1.0, abs(x)):
        raise ValueError(f"{x} is not an integer multiple within tolerance")
    return int(n)


@dataclass(frozen=True)
class Grid:
    """Space-time lattice for the advection solve.

    ``dx`` must divide the unit line and the transport delay 1/speed must be
    an integer number of time steps, so that injection decisions line up with
    the delayed outflow they produce.
    """

    speed: float
    dx: float
    dt: float
    nx: int
    nt: int
    horizon: float

    def __post_init__(self) -> None:
        if self.speed <= 0:
            raise ValueError("transport speed must be > 0")
        if self.dx <= 0 or self.dt <= 0:
            raise ValueError("grid steps must be > 0")
        if self.nx != _near_int(1.0 / self.dx):
            raise ValueError("dx must divide the unit line: nx = 1/dx")
        if self.nt != _near_int(self.horizon / self.dt):
            raise ValueError("dt must divide the horizon: nt = horizon/dt")
        _near_int(self.delay / self.dt)  # delay must sit on the time lattice
        if self.horizon <= self.delay:
            raise ValueError("horizon must exceed the transport delay 1/speed")

    @classmethod
    def make(cls, speed: float, dx: float, horizon: float,
             courant: float = 1.0) -> "Grid":
        """Build a lattice with the given Courant number (default exactly 1,
        which makes the upwind solve an exact delay)."""
        if not (0 < courant <= 1.0):
            raise CFLError(courant)
        dt = courant * dx / speed
        return cls(speed=speed, dx=dx, dt=dt, nx=_near_int(1.0 / dx),
                   nt=_near_int(horizon / dt), horizon=horizon)

    @property
    def courant(self) -> float:
        return self.speed * self.dt / self.dx

    @property
    def delay(self) -> float:
        """Transport time from inflow to outflow."""
        return 1.0 / self.speed

    @property
    def delay_steps(self) -> int:
        return _near_int(self.delay / self.dt)

    @property
    def control_steps(self) -> int:
        """Index of the last control time T - 1/speed on the time lattice."""
        return self.nt - self.delay_steps

    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt + 1)

    def positions(self) -> np.ndarray:
        return self.dx * np.arange(self.nx + 1)

    def control_times(self) -> np.ndarray:
        """Lattice times of the control horizon [0, T - 1/speed]."""
        return self.dt * np.arange(self.control_steps + 1)

    def output_times(self) -> np.ndarray:
        """Lattice times of the scored outflow window [1/speed, T]."""
        return self.dt * np.arange(self.delay_steps, self.nt + 1)


@dataclass(frozen=True)
class ControlSignal:
    """Injection values on lattice times, applied piecewise-constant-left.

    Values are held from each knot until the next one (decisions take effect
    at the left endpoint); past the last knot the final value is held, which
    only ever feeds lattice cells whose outflow falls beyond the horizon.
    """

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if times.shape != values.shape or times.ndim != 1 or times.size == 0:
            raise ValueError("control times and values must be matching 1-d arrays")
        if np.any(np.diff(times) <= 0):
            raise ValueError("control times must be strictly increasing")
        if not np.all(np.isfinite(values)):
            raise ValueError("control values must be finite")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def at(self, t):
        """Evaluate the signal at time(s) ``t``."""
        t = np.asarray(t, dtype=float)
        if np.any(t < self.times[0] - 1e-12):
            raise ValueError("control signal evaluated before its first knot")
        idx = np.searchsorted(self.times, t + 1e-12, side="right") - 1
        out = self.values[np.clip(idx, 0, self.values.size - 1)]
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class FieldState:
    """Discrete field z over (space x time), with its inflow and outflow."""

    z: np.ndarray
    inflow: ControlSignal
    outflow: np.ndarray
    grid: Grid


def validate_cfl(grid: Grid) -> float:
    """Return the Courant number; raise :class:`CFLError` if it exceeds 1."""
    c = grid.courant
    if c > 1.0 + 1e-12:
        raise CFLError(c)
    return c


def upwind_solve(grid: Grid, z0, u: ControlSignal) -> FieldState:
    """March the left-sided upwind scheme

        z_j^{i+1} = z_j^i - c (z_j^i - z_{j-1}^i),   c = speed dt / dx,

    with boundary z_0^i = u(tau_i) and initial profile ``z0`` (array on the
    spatial lattice, or None for an empty line).
    """
    c = validate_cfl(grid)
    if z0 is None:
        z0 = np.zeros(grid.nx + 1)
    z0 = np.asarray(z0, dtype=float)
    if z0.shape != (grid.nx + 1,):
        raise ValueError(f"z0 must have {grid.nx + 1} lattice values")
    z = np.empty((grid.nx + 1, grid.nt + 1))
    z[:, 0] = z0
    boundary = np.atleast_1d(np.asarray(u.at(grid.times()), dtype=float))
    z[0, :] = boundary  # inflow boundary wins at the (0, 0) corner
    for i in range(grid.nt):
        z[1:, i + 1] = z[1:, i] - c * (z[1:, i] - z[:-1, i])
    return FieldState(z=z, inflow=u, outflow=z[grid.nx, :].copy(), grid=grid)


def exact_shift_output(speed: float, z0, u: ControlSignal, t):
    """Outflow of the exact solution: u(t - 1/speed) once the first injection
    arrives, and the advected initial profile z0(1 - speed t) before that."""
    if speed <= 0:
        raise ValueError("transport speed must be > 0")
    delay = 1.0 / speed
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    horizon = u.times[-1] + delay
    if np.any(t_arr < -1e-12) or np.any(t_arr > horizon + 1e-9):
        raise ValueError("output time outside [0, horizon]")
    out = np.empty(t_arr.shape)
    late = t_arr >= delay - 1e-12
    if np.any(late):
        out[late] = np.atleast_1d(u.at(np.maximum(t_arr[late] - delay, 0.0)))
    if np.any(~late):
        x = 1.0 - speed * t_arr[~late]
        if z0 is None:
            out[~late] = 0.0
        elif callable(z0):
            out[~late] = np.asarray([z0(xx) for xx in x], dtype=float)
        else:
            z0 = np.asarray(z0, dtype=float)
            xs = np.linspace(0.0, 1.0, z0.size)
            out[~late] = np.interp(x, xs, z0)
    return float(out[0]) if np.ndim(t) == 0 else out
