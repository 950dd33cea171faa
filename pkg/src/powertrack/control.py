"""Closed-form injection laws for three information levels.

All three laws inject the best available prediction of the demand one
transport delay ahead (the conditional mean given what the controller has
seen), differing only in how fresh that information is:

* ``cm1_control``  - no observations after start: predict from time 0.
* ``cm2_control``  - periodic observations: predict from the last update.
* ``cm3_control``  - continuous observation: predict from the current value.

The laws are pure formulas of parameters and observations; reading values
off a path and applying the transport delay is the caller's job.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .demand import DemandParams, DemandPath
from .moments import conditional_mean, first_moment

__all__ = [
    "UpdateSchedule",
    "cm1_control",
    "cm2_control",
    "cm3_control",
    "pathwise_control_gap",
]


@dataclass(frozen=True)
class UpdateSchedule:
    """Observation instants t_hat_i = i * interval on the control horizon."""

    interval: float
    times: np.ndarray

    def __post_init__(self) -> None:
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if self.interval <= 0:
            raise ValueError("update interval must be > 0")
        if times.size == 0 or times[0] != 0.0:
            raise ValueError("update schedule must start at t=0")
        if np.any(np.diff(times) <= 0):
            raise ValueError("update times must be strictly increasing")
        object.__setattr__(self, "times", times)

    @classmethod
    def regular(cls, interval: float, control_end: float,
                lattice_dt: float | None = None) -> "UpdateSchedule":
        """Updates at 0, interval, 2*interval, ... within [0, control_end].

        When ``lattice_dt`` is given, the interval must be an integer number
        of lattice steps so observations line up with the transport grid.
        """
        if interval <= 0:
            raise ValueError("update interval must be > 0")
        if lattice_dt is not None:
            steps = interval / lattice_dt
            if abs(steps - round(steps)) > 1e-9 * max(1.0, steps):
                raise ValueError(
                    f"update interval {interval} is not a multiple of the "
                    f"lattice step {lattice_dt}")
        n = int(np.floor(control_end / interval + 1e-9))
        return cls(interval=interval, times=interval * np.arange(n + 1))

    def last_index(self, t: float) -> int:
        """Index of the most recent update at or before ``t``."""
        if np.any(np.asarray(t) < -1e-12):
            raise ValueError("t must be >= 0")
        idx = np.searchsorted(self.times, np.asarray(t, dtype=float) + 1e-12,
                              side="right") - 1
        return int(idx) if np.ndim(t) == 0 else idx

    def last_update(self, t: float) -> float:
        return float(self.times[self.last_index(t)])


def _check_horizon(t) -> None:
    if np.any(np.asarray(t, dtype=float) < 0):
        raise ValueError("control time must be >= 0")


def cm1_control(params: DemandParams, speed: float, t):
    """Optimal injection using start-time information only: the unconditional
    mean demand one transport delay ahead, E[Y_{t + 1/speed}]."""
    _check_horizon(t)
    return first_moment(params, np.asarray(t, dtype=float) + 1.0 / speed)


def cm2_control(params: DemandParams, speed: float, t, t_hat: float, y_obs: float):
    """Optimal injection given the demand ``y_obs`` observed at the last
    update ``t_hat``: E[Y_{t + 1/speed} | Y_{t_hat} = y_obs]."""
    _check_horizon(t)
    if np.any(np.asarray(t, dtype=float) < t_hat - 1e-12):
        raise ValueError("control time t must be >= the update time t_hat")
    return conditional_mean(params, t_hat, y_obs,
                            np.asarray(t, dtype=float) + 1.0 / speed)


def cm3_control(params: DemandParams, speed: float, t, y_now: float):
    """Optimal injection under continuous observation of the demand:
    E[Y_{t + 1/speed} | Y_t = y_now]."""
    _check_horizon(t)
    t = np.asarray(t, dtype=float)
    return conditional_mean(params, t, y_now, t + 1.0 / speed)


def pathwise_control_gap(params: DemandParams, speed: float, path: DemandPath,
                         schedule: UpdateSchedule, t: float) -> float:
    """Realised difference between the continuously-informed injection and the
    periodically-updated one at time ``t`` on a given path.

    Both controls read the same trajectory; the gap shrinks to zero as the
    update interval does, and vanishes exactly at update instants.
    """
    t_hat = schedule.last_update(t)
    y_now = path.value_at(t)
    y_obs = path.value_at(t_hat)
    return float(cm3_control(params, speed, t, y_now)
                 - cm2_control(params, speed, t, t_hat, y_obs))
