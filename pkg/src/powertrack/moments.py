"""Closed-form moments of the jump-diffusion demand process.

All quantities follow from the explicit solution of the SDE.  With
D(t) = e^{-kappa t} y0 + kappa int_0^t e^{-kappa (t-s)} mu(s) ds denoting the
deterministic part, the first moment is D(t) plus the mean of the decayed
jump sum, and the second moment adds the diffusion variance, the second
moment of the decayed jump sum and the cross term.  Setting the jump height
moments to zero collapses everything to the pure-diffusion formulas.

Near-zero time spans are evaluated with expm1 so that 1 - e^{-kappa dt}
never suffers catastrophic cancellation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .demand import DemandParams, JumpSpec, MeanFunction

__all__ = [
    "MomentSet",
    "JumpMoments",
    "weighted_mean_integral",
    "jump_sum_moments",
    "first_moment",
    "conditional_mean",
    "second_moment",
    "conditional_variance",
    "expected_quadratic_deviation",
    "moments_at",
]


@dataclass(frozen=True)
class MomentSet:
    """First two moments of the demand at one time."""

    t: float
    mean: float
    second_moment: float

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean ** 2


class JumpMoments(NamedTuple):
    mean: float
    second_moment: float


def _as_times(t, lower=0.0, name: str = "t"):
    t = np.asarray(t, dtype=float)
    if np.any(t < lower):
        raise ValueError(f"{name} must be >= {lower}")
    return t


def weighted_mean_integral(mean: MeanFunction, kappa: float, t0, t):
    """kappa * int_{t0}^{t} exp(-kappa (t - s)) mu(s) ds.

    Closed form for constant and sinusoidal forecasts; verified composite
    Gauss-Legendre quadrature for tabulated ones.
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    t0a = np.asarray(t0, dtype=float)
    ta = np.asarray(t, dtype=float)
    if np.any(ta < t0a):
        raise ValueError("t must be >= t0")
    return mean.weighted_integral(kappa, t0, t)


def jump_sum_moments(jump: JumpSpec, kappa: float, delta) -> JumpMoments:
    """Mean and second moment of sum_i gamma_i e^{-kappa (delta - t_i)} over a
    span of length ``delta`` with Poisson(nu * delta) events at uniform times.

        mean = gbar (nu / kappa) (1 - e^{-kappa delta})
        E[.^2] = nu (1 - e^{-2 kappa delta}) / (2 kappa) E[gamma^2]
                 + nu^2 (1 - e^{-kappa delta})^2 / kappa^2 gbar^2
    """
    if kappa <= 0:
        raise ValueError("kappa must be > 0")
    delta = _as_times(delta, name="delta")
    nu = jump.intensity
    gbar = jump.mean_height
    g2 = jump.mean_square_height
    one_minus = -np.expm1(-kappa * delta)          # 1 - e^{-kappa delta}
    one_minus2 = -np.expm1(-2.0 * kappa * delta)   # 1 - e^{-2 kappa delta}
    mean = gbar * (nu / kappa) * one_minus
    second = (nu * one_minus2 / (2.0 * kappa) * g2
              + (nu ** 2) * (one_minus ** 2) / (kappa ** 2) * gbar ** 2)
    if mean.ndim == 0:
        return JumpMoments(float(mean), float(second))
    return JumpMoments(mean, second)


def _deterministic_part(params: DemandParams, t0, t):
    decay = np.exp(-params.kappa * (np.asarray(t, dtype=float) - np.asarray(t0, dtype=float)))
    return decay * params.y0 + weighted_mean_integral(params.mean, params.kappa, t0, t)


def first_moment(params: DemandParams, t):
    """E[Y_t] = e^{-kappa t} y0 + weighted mean integral + jump-sum mean."""
    t = _as_times(t)
    out = (_deterministic_part(params, 0.0, t)
           + jump_sum_moments(params.jump, params.kappa, t).mean)
    return float(out) if np.ndim(out) == 0 else out


def conditional_mean(params: DemandParams, t0, y_t0, t):
    """E[Y_t | Y_{t0} = y_t0], the Markov restart of the first moment."""
    t0a = _as_times(t0, name="t0")
    ta = np.asarray(t, dtype=float)
    if np.any(ta < t0a):
        raise ValueError("t must be >= t0")
    decay = np.exp(-params.kappa * (ta - t0a))
    out = (decay * np.asarray(y_t0, dtype=float)
           + weighted_mean_integral(params.mean, params.kappa, t0, t)
           + jump_sum_moments(params.jump, params.kappa, ta - t0a).mean)
    return float(out) if np.ndim(out) == 0 else out


def second_moment(params: DemandParams, t):
    """E[Y_t^2] from the closed form:

        D(t)^2 + sigma^2 (1 - e^{-2 kappa t}) / (2 kappa)
        + E[(jump sum)^2] + 2 D(t) * E[jump sum]

    with D(t) the deterministic part of the solution.
    """
    t = _as_times(t)
    det = _deterministic_part(params, 0.0, t)
    diff_var = params.sigma ** 2 * (-np.expm1(-2.0 * params.kappa * t)) / (2.0 * params.kappa)
    jm = jump_sum_moments(params.jump, params.kappa, t)
    out = det ** 2 + diff_var + jm.second_moment + 2.0 * det * jm.mean
    return float(out) if np.ndim(out) == 0 else out


def conditional_variance(params: DemandParams, delta):
    """Var[Y_{t+delta} | F_t]; depends only on the elapsed span ``delta``.

    Equals the diffusion variance plus the variance of the decayed jump sum,
    and is the expected squared tracking error left by a control built from
    information ``delta`` old.
    """
    delta = _as_times(delta, name="delta")
    diff_var = params.sigma ** 2 * (-np.expm1(-2.0 * params.kappa * delta)) / (2.0 * params.kappa)
    jm = jump_sum_moments(params.jump, params.kappa, delta)
    out = diff_var + (jm.second_moment - np.square(jm.mean))
    return float(out) if np.ndim(out) == 0 else out


def expected_quadratic_deviation(params: DemandParams, t, y_out):
    """E[(Y_t - y_out)^2] for a deterministic output level ``y_out``:
    second_moment(t) - 2 y_out first_moment(t) + y_out^2."""
    t = _as_times(t)
    y_out = np.asarray(y_out, dtype=float)
    out = second_moment(params, t) - 2.0 * y_out * first_moment(params, t) + y_out ** 2
    return float(out) if np.ndim(out) == 0 else out


def moments_at(params: DemandParams, t: float) -> MomentSet:
    """Bundle mean and second moment at one time."""
    return MomentSet(t=float(t), mean=first_moment(params, t),
                     second_moment=second_moment(params, t))
