"""Deterministic cost evaluation and control optimisation.

The expected squared tracking error E[(Y_t - y(t))^2] reduces to
E[Y_t^2] - 2 y(t) E[Y_t] + y(t)^2, so the stochastic tracking problem
becomes a deterministic one in the first two moments of the demand.  On a
delay-aligned lattice the outflow is the injection shifted by the transport
time, which makes the discretised objective a separable quadratic in the
control vector.  This module evaluates that cost (analytically and by Monte
Carlo), minimises it (iterative gradient descent with an exact closed-form
solver as its oracle), and chains per-interval solves when the demand is
re-observed on a schedule.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .control import UpdateSchedule, cm1_control, cm3_control
from .demand import DemandParams, DemandPath, MeanFunction
from .moments import (
    conditional_mean,
    conditional_variance,
    first_moment,
    second_moment,
)
from .transport import ControlSignal, FieldState, Grid, validate_cfl

__all__ = [
    "DeterministicDemand",
    "UpdateInfo",
    "CostReport",
    "OptimizerConfig",
    "ConvergenceError",
    "Cm1Policy",
    "Cm2Policy",
    "Cm3Policy",
    "deterministic_cost",
    "mc_cost_estimate",
    "minimize_control",
    "minimize_control_direct",
    "sequential_update_solve",
    "cumrmse_analytic",
]


@dataclass(frozen=True)
class DeterministicDemand:
    """Perfectly known demand profile: mean = profile, variance = 0."""

    profile: MeanFunction

    def mean_at(self, t):
        return self.profile.at(t)


DemandModel = Union[DemandParams, DeterministicDemand]


@dataclass(frozen=True)
class UpdateInfo:
    """Observations attached to an update schedule, one value per update."""

    schedule: UpdateSchedule
    observations: np.ndarray

    def __post_init__(self) -> None:
        obs = np.atleast_1d(np.asarray(self.observations, dtype=float))
        if obs.shape != self.schedule.times.shape:
            raise ValueError("need exactly one observation per update time")
        object.__setattr__(self, "observations", obs)


@dataclass(frozen=True)
class CostReport:
    """Time-integrated tracking cost over the scored window [1/speed, T].

    ``per_time`` holds E[(Y_t - y(t))^2] at the lattice times in ``times``;
    ``expected_cost`` integrates it and ``cumrmse`` integrates its square
    root.  Monte-Carlo estimates also carry standard errors.
    """

    expected_cost: float
    cumrmse: float
    times: np.ndarray
    per_time: np.ndarray
    per_time_se: np.ndarray | None = None
    expected_cost_se: float | None = None
    cumrmse_se: float | None = None


@dataclass(frozen=True)
class OptimizerConfig:
    max_iters: int = 500
    grad_tol: float = 1e-10
    armijo: float = 1e-4
    shrink: float = 0.5
    initial_guess: str = "zero"  # "zero" or "forecast"

    def __post_init__(self) -> None:
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.grad_tol <= 0:
            raise ValueError("grad_tol must be > 0")
        if not (0.0 < self.shrink < 1.0):
            raise ValueError("shrink must be in (0, 1)")
        if not (0.0 < self.armijo <= 0.5):
            raise ValueError("armijo must be in (0, 0.5]")
        if self.initial_guess not in ("zero", "forecast"):
            raise ValueError("initial_guess must be 'zero' or 'forecast'")


class ConvergenceError(RuntimeError):
    """Optimizer ran out of iterations; carries the last iterate."""

    def __init__(self, message: str, control: ControlSignal, grad_norm: float):
        super().__init__(message)
        self.control = control
        self.grad_norm = grad_norm


# ---------------------------------------------------------------------------
# Moment series on the lattice
# ---------------------------------------------------------------------------

def _conditioning_at(info: UpdateInfo, decision_times: np.ndarray):
    """Update time and observed value in force at each decision time."""
    idx = info.schedule.last_index(decision_times)
    return info.schedule.times[idx], info.observations[idx]


def _moment_series(model: DemandModel, grid: Grid,
                   info: UpdateInfo | None) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mean and second moment of the demand at the scored output times, under
    whatever conditioning the information structure provides."""
    out_t = grid.output_times()
    if isinstance(model, DeterministicDemand):
        m1 = np.atleast_1d(np.asarray(model.mean_at(out_t), dtype=float))
        return out_t, m1, m1 ** 2
    if info is None:
        return out_t, first_moment(model, out_t), second_moment(model, out_t)
    # The output at time t was decided at t - delay; it uses the last
    # observation at or before that decision time.
    t_hat, obs = _conditioning_at(info, out_t - grid.delay)
    m1 = conditional_mean(model, t_hat, obs, out_t)
    m2 = m1 ** 2 + conditional_variance(model, out_t - t_hat)
    return out_t, m1, m2


def _check_control_lattice(u: ControlSignal, grid: Grid) -> None:
    ct = grid.control_times()
    if u.times.shape != ct.shape or not np.allclose(u.times, ct, atol=1e-9):
        raise ValueError("control signal is not defined on the grid's control lattice")


def _trapezoid_weights(times: np.ndarray) -> np.ndarray:
    w = np.zeros(times.size)
    d = np.diff(times)
    w[:-1] += 0.5 * d
    w[1:] += 0.5 * d
    return w


# ---------------------------------------------------------------------------
# Cost evaluation
# ---------------------------------------------------------------------------

def deterministic_cost(model: DemandModel, grid: Grid, u: ControlSignal,
                       info: UpdateInfo | None = None) -> CostReport:
    """Exact expected tracking cost of a fixed injection plan.

    The injection is propagated as an exact shift (outflow at t equals the
    injection at t - 1/speed), the squared-error integrand is evaluated from
    the closed-form moments at every scored lattice time, and both the cost
    and its square root are integrated by the trapezoid rule.
    """
    _check_control_lattice(u, grid)
    out_t, m1, m2 = _moment_series(model, grid, info)
    y = u.values
    per_time = m2 - 2.0 * y * m1 + y ** 2
    expected = float(np.trapezoid(per_time, out_t))
    cumrmse = float(np.trapezoid(np.sqrt(np.maximum(per_time, 0.0)), out_t))
    return CostReport(expected_cost=expected, cumrmse=cumrmse,
                      times=out_t, per_time=per_time)


@dataclass(frozen=True)
class Cm1Policy:
    """Apply the no-update law: injection fixed at start time."""

    params: DemandParams

    def control_for(self, path: DemandPath, grid: Grid) -> ControlSignal:
        ct = grid.control_times()
        return ControlSignal(ct, cm1_control(self.params, grid.speed, ct))


@dataclass(frozen=True)
class Cm2Policy:
    """Re-read the path at each scheduled update, hold the law in between."""

    params: DemandParams
    schedule: UpdateSchedule

    def control_for(self, path: DemandPath, grid: Grid) -> ControlSignal:
        ct = grid.control_times()
        obs_idx = _lattice_indices(self.schedule.times, grid, path)
        t_hat, obs = _conditioning_at(
            UpdateInfo(self.schedule, path.values[obs_idx]), ct)
        u = conditional_mean(self.params, t_hat, obs, ct + grid.delay)
        return ControlSignal(ct, u)


@dataclass(frozen=True)
class Cm3Policy:
    """Read the path continuously; injections still act one delay later."""

    params: DemandParams

    def control_for(self, path: DemandPath, grid: Grid) -> ControlSignal:
        ct = grid.control_times()
        y_now = path.values[:ct.size]
        return ControlSignal(ct, cm3_control(self.params, grid.speed, ct, y_now))


Policy = Union[Cm1Policy, Cm2Policy, Cm3Policy]


def _lattice_indices(times: np.ndarray, grid: Grid, path: DemandPath) -> np.ndarray:
    idx = np.round(np.asarray(times, dtype=float) / grid.dt).astype(int)
    if np.any(np.abs(idx * grid.dt - times) > 1e-9) or np.any(idx >= path.times.size):
        raise ValueError("times are not aligned with the path lattice")
    return idx


def _check_path_lattice(path: DemandPath, grid_times: np.ndarray) -> None:
    if path.times.shape != grid_times.shape or not np.allclose(
            path.times, grid_times, atol=1e-9):
        raise ValueError("path grid does not match the transport lattice")


def mc_cost_estimate(paths: list[DemandPath], grid: Grid,
                     control: Union[ControlSignal, Policy]) -> CostReport:
    """Monte-Carlo tracking cost of a fixed control or of a causal policy.

    Policies read each path only through what their information level allows
    (CM2 at update times, CM3 continuously) and always act one transport
    delay later.  Returns per-time means with standard errors; the cumrmse
    standard error comes from the delta method.
    """
    if len(paths) < 2:
        raise ValueError("need at least 2 paths for a Monte-Carlo estimate")
    gt = grid.times()
    shared = paths[0].times
    for p in paths:
        if p.times is not shared:
            _check_path_lattice(p, gt)
    _check_path_lattice(paths[0], gt)

    out_t = grid.output_times()
    d0 = grid.delay_steps
    if isinstance(control, Cm1Policy):  # path-independent, build once
        control = control.control_for(paths[0], grid)
    fixed_y = None
    if isinstance(control, ControlSignal):
        _check_control_lattice(control, grid)
        fixed_y = control.values

    n = len(paths)
    dev2 = np.empty((n, out_t.size))
    for j, p in enumerate(paths):
        y = fixed_y if fixed_y is not None else control.control_for(p, grid).values
        dev2[j] = (p.values[d0:] - y) ** 2

    per_time = dev2.mean(axis=0)
    per_time_se = dev2.std(axis=0, ddof=1) / np.sqrt(n)
    costs = np.trapezoid(dev2, out_t, axis=1)
    expected = float(costs.mean())
    expected_se = float(costs.std(ddof=1) / np.sqrt(n))
    root = np.sqrt(per_time)
    cumrmse = float(np.trapezoid(root, out_t))
    # delta method: linearise sqrt(mean) around the per-time means
    slope = np.divide(0.5, root, out=np.zeros_like(root), where=root > 0)
    per_path_lin = np.trapezoid(dev2 * slope, out_t, axis=1)
    cumrmse_se = float(per_path_lin.std(ddof=1) / np.sqrt(n))
    return CostReport(expected_cost=expected, cumrmse=cumrmse, times=out_t,
                      per_time=per_time, per_time_se=per_time_se,
                      expected_cost_se=expected_se, cumrmse_se=cumrmse_se)


# ---------------------------------------------------------------------------
# Optimisation
# ---------------------------------------------------------------------------

def _descend(targets: np.ndarray, weights: np.ndarray, u0: np.ndarray,
             cfg: OptimizerConfig) -> np.ndarray:
    """Gradient descent with backtracking on J(u) = sum_k w_k (u_k - m_k)^2.

    The objective equals the discretised tracking cost up to a constant, so
    the line search behaves identically on either.  Steps start at the
    inverse curvature bound and continue with Barzilai-Borwein estimates,
    each safeguarded by an Armijo backtracking search.
    """
    u = u0.astype(float).copy()

    def value(v: np.ndarray) -> float:
        return float(np.sum(weights * (v - targets) ** 2))

    def gradient(v: np.ndarray) -> np.ndarray:
        return 2.0 * weights * (v - targets)

    step = 1.0 / (2.0 * float(np.max(weights)))
    g = gradient(u)
    prev_u = prev_g = None
    for _ in range(cfg.max_iters):
        gnorm = float(np.max(np.abs(g))) if g.size else 0.0
        if gnorm < cfg.grad_tol:
            return u
        if prev_u is not None:
            s = u - prev_u
            yv = g - prev_g
            sy = float(np.dot(s, yv))
            if sy > 0:
                step = float(np.dot(s, s)) / sy
        j0 = value(u)
        gg = float(np.dot(g, g))
        alpha = step
        for _ in range(60):
            trial = u - alpha * g
            if value(trial) <= j0 - cfg.armijo * alpha * gg:
                break
            alpha *= cfg.shrink
        prev_u, prev_g = u, g
        u = u - alpha * g
        g = gradient(u)
    raise ConvergenceError(
        f"gradient descent did not reach tolerance {cfg.grad_tol} "
        f"within {cfg.max_iters} iterations",
        control=ControlSignal(np.arange(u.size, dtype=float), u)
        if u.size else ControlSignal(np.array([0.0]), np.array([0.0])),
        grad_norm=float(np.max(np.abs(g))) if g.size else 0.0,
    )


def _initial_guess(model: DemandModel, grid: Grid, cfg: OptimizerConfig) -> np.ndarray:
    ct = grid.control_times()
    if cfg.initial_guess == "zero":
        return np.zeros(ct.size)
    if isinstance(model, DeterministicDemand):
        return np.atleast_1d(np.asarray(model.mean_at(ct + grid.delay), dtype=float))
    return np.atleast_1d(np.asarray(model.mean.at(ct + grid.delay), dtype=float))


def minimize_control(model: DemandModel, grid: Grid,
                     config: OptimizerConfig | None = None,
                     info: UpdateInfo | None = None) -> ControlSignal:
    """Minimise the discretised tracking cost over the control vector.

    The objective is a separable quadratic, so its gradient is analytic;
    convergence is declared when the gradient sup-norm falls below the
    configured tolerance.  Raises :class:`ConvergenceError` (with the last
    iterate attached) if the iteration budget runs out.
    """
    validate_cfl(grid)
    cfg = config or OptimizerConfig()
    _, m1, _ = _moment_series(model, grid, info)
    weights = _trapezoid_weights(grid.output_times())
    u0 = _initial_guess(model, grid, cfg)
    ct = grid.control_times()
    try:
        u = _descend(np.asarray(m1, dtype=float), weights, u0, cfg)
    except ConvergenceError as err:
        raise ConvergenceError(str(err),
                               control=ControlSignal(ct, err.control.values),
                               grad_norm=err.grad_norm) from None
    return ControlSignal(ct, u)


def minimize_control_direct(model: DemandModel, grid: Grid,
                            info: UpdateInfo | None = None) -> ControlSignal:
    """Closed-form minimiser: inject the (conditional) mean demand one
    transport delay ahead.  Serves as the oracle for the iterative solver."""
    _, m1, _ = _moment_series(model, grid, info)
    return ControlSignal(grid.control_times(), np.asarray(m1, dtype=float))


# ---------------------------------------------------------------------------
# Sequential re-optimisation under demand updates
# ---------------------------------------------------------------------------

def sequential_update_solve(
    params: DemandParams,
    grid: Grid,
    schedule: UpdateSchedule,
    path: DemandPath,
    solver: str = "direct",
    config: OptimizerConfig | None = None,
    z0: np.ndarray | None = None,
) -> tuple[ControlSignal, FieldState, CostReport]:
    """Re-optimise the injection on each update interval of a realised path.

    At every update time the demand is read off the path, the tracking cost
    conditional on that observation is minimised over the interval's control
    values, and the transport field is advanced from the carried state.  The
    concatenated control is then scored against the realised trajectory.
    """
    if solver not in ("direct", "iterative"):
        raise ValueError("solver must be 'direct' or 'iterative'")
    if abs(grid.courant - 1.0) > 1e-9:
        raise ValueError("sequential update solve requires a Courant-1 grid")
    _check_path_lattice(path, grid.times())
    k_ctl = grid.control_steps
    upd = _lattice_indices(schedule.times, grid, path)
    if np.any(upd > k_ctl):
        raise ValueError("update times must lie on the control horizon")
    cfg = config or OptimizerConfig()
    ct = grid.control_times()
    weights = _trapezoid_weights(grid.output_times())
    delay = grid.delay

    u = np.empty(k_ctl + 1)
    nx, nt = grid.nx, grid.nt
    z = np.empty((nx + 1, nt + 1))
    z[:, 0] = 0.0 if z0 is None else np.asarray(z0, dtype=float)
    c = grid.courant

    marched = 0

    def advance(stop: int) -> None:
        # boundary value at step n is the control decided for tau_n
        nonlocal marched
        for n in range(marched, stop):
            z[0, n] = u[min(n, k_ctl)]
            z[1:, n + 1] = z[1:, n] - c * (z[1:, n] - z[:-1, n])
        marched = max(marched, stop)

    bounds = list(upd) + [k_ctl + 1]
    for i in range(len(upd)):
        a, b = bounds[i], bounds[i + 1]
        if a >= b:
            continue
        t_hat = float(schedule.times[i])
        y_obs = float(path.values[upd[i]])
        targets = np.atleast_1d(conditional_mean(
            params, t_hat, y_obs, ct[a:b] + delay))
        if solver == "direct":
            u[a:b] = targets
        else:
            u[a:b] = _descend(targets, weights[a:b], np.zeros(b - a), cfg)
        advance(min(b, nt))
    advance(nt)  # tail: boundary holds the final control value
    z[0, nt] = u[k_ctl]

    signal = ControlSignal(ct, u)
    outflow = z[nx, :].copy()
    d0 = grid.delay_steps
    out_t = grid.output_times()
    dev = path.values[d0:] - outflow[d0:]
    report = CostReport(
        expected_cost=float(np.trapezoid(dev ** 2, out_t)),
        cumrmse=float(np.trapezoid(np.abs(dev), out_t)),
        times=out_t,
        per_time=dev ** 2,
    )
    field = FieldState(z=z, inflow=signal, outflow=outflow, grid=grid)
    return signal, field, report


# ---------------------------------------------------------------------------
# Analytic cumulative RMSE of the optimal laws
# ---------------------------------------------------------------------------

def cumrmse_analytic(params: DemandParams, speed: float, method: str,
                     horizon: float, update_interval: float | None = None,
                     points_per_segment: int = 801) -> float:
    """Time integral of the root expected squared error of the optimal law.

    Under the optimal injection the expected squared error at output time t
    equals the conditional variance over the age of the information used:
    the full elapsed time for the no-update law, the time since the last
    update plus the delay for the scheduled law, and exactly the delay for
    the continuously informed law.  Integration is trapezoidal on segments
    split at the information-refresh instants.
    """
    delay = 1.0 / speed
    if horizon <= delay:
        raise ValueError("horizon must exceed the transport delay 1/speed")
    method = method.upper()
    if method == "CM1":
        segments = [(delay, horizon, 0.0)]
    elif method == "CM3":
        segments = [(delay, horizon, None)]
    elif method == "CM2":
        if update_interval is None:
            raise ValueError("CM2 needs an update interval")
        sched = UpdateSchedule.regular(update_interval, horizon - delay)
        segments = []
        for i, t_hat in enumerate(sched.times):
            a = t_hat + delay
            b = sched.times[i + 1] + delay if i + 1 < sched.times.size else horizon
            b = min(b, horizon)
            if b > a:
                segments.append((a, b, float(t_hat)))
    else:
        raise ValueError("method must be 'CM1', 'CM2' or 'CM3'")

    total = 0.0
    for a, b, t_hat in segments:
        t = np.linspace(a, b, points_per_segment)
        span = np.full_like(t, delay) if t_hat is None else t - t_hat
        total += float(np.trapezoid(
            np.sqrt(conditional_variance(params, span)), t))
    return total
