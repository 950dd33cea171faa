"""Mean-reverting demand processes with optional compound-Poisson jumps.

The demand Y_t follows

    dY_t = kappa * (mu(t) - Y_t) dt + sigma dW_t + gamma_t dN_t,    Y_0 = y0,

where N_t is a Poisson process of rate ``nu`` and the jump heights gamma_t
are i.i.d. draws from a configurable law.  Sampling uses the explicit
solution of the SDE, so transitions between arbitrary grid times are exact
(no discretisation bias); an Euler-Maruyama sampler is kept purely as an
independent cross-check.

Every sampled path carries its full noise record (standard-normal draws,
jump times, jump heights), so paths can be rebuilt bit-exactly and ensembles
can share one realisation of the noise across different initial values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Union

import numpy as np

__all__ = [
    "ConstantHeight",
    "NormalHeight",
    "LognormalHeight",
    "JumpSpec",
    "ConstantMean",
    "SinusoidMean",
    "TabulatedMean",
    "MeanFunction",
    "DemandParams",
    "StepNoise",
    "DemandPath",
    "QuadratureError",
    "substream",
    "draw_step_noise",
    "exact_step",
    "sample_path",
    "sample_paths",
    "sample_ensemble",
    "euler_path",
    "rebuild_values",
]


class QuadratureError(RuntimeError):
    """Tabulated-mean quadrature failed to reach the requested tolerance."""


# ---------------------------------------------------------------------------
# Jump height laws
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConstantHeight:
    """Degenerate jump height: every jump has size ``value``."""

    value: float

    @property
    def mean(self) -> float:
        return self.value

    @property
    def mean_square(self) -> float:
        return self.value ** 2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return np.full(n, float(self.value))


@dataclass(frozen=True)
class NormalHeight:
    """Gaussian jump heights with mean ``loc`` and standard deviation ``scale``."""

    loc: float
    scale: float

    def __post_init__(self) -> None:
        if self.scale < 0:
            raise ValueError("jump height scale must be >= 0")

    @property
    def mean(self) -> float:
        return self.loc

    @property
    def mean_square(self) -> float:
        return self.loc ** 2 + self.scale ** 2

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.normal(self.loc, self.scale, n)


@dataclass(frozen=True)
class LognormalHeight:
    """Log-normal jump heights; parameters are those of the underlying normal."""

    log_mean: float
    log_std: float

    def __post_init__(self) -> None:
        if self.log_std < 0:
            raise ValueError("jump height log_std must be >= 0")

    @property
    def mean(self) -> float:
        return math.exp(self.log_mean + 0.5 * self.log_std ** 2)

    @property
    def mean_square(self) -> float:
        return math.exp(2.0 * self.log_mean + 2.0 * self.log_std ** 2)

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.lognormal(self.log_mean, self.log_std, n)


HeightLaw = Union[ConstantHeight, NormalHeight, LognormalHeight]


@dataclass(frozen=True)
class JumpSpec:
    """Compound-Poisson jump component: event rate plus height law.

    ``intensity == 0`` disables jumps entirely (pure diffusion).
    """

    intensity: float
    height_law: HeightLaw = ConstantHeight(0.0)

    def __post_init__(self) -> None:
        if not math.isfinite(self.intensity) or self.intensity < 0:
            raise ValueError("jump intensity must be finite and >= 0")

    @classmethod
    def none(cls) -> "JumpSpec":
        return cls(0.0, ConstantHeight(0.0))

    @property
    def mean_height(self) -> float:
        """E[gamma], the average jump size."""
        return self.height_law.mean

    @property
    def mean_square_height(self) -> float:
        """E[gamma^2], the second moment of the jump size."""
        return self.height_law.mean_square

    @property
    def active(self) -> bool:
        """Whether jumps can move the path at all."""
        return self.intensity > 0 and (
            self.mean_height != 0.0 or self.mean_square_height != 0.0
        )


# ---------------------------------------------------------------------------
# Mean (forecast) functions
# ---------------------------------------------------------------------------

_GL_NODES: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(n: int) -> tuple[np.ndarray, np.ndarray]:
    if n not in _GL_NODES:
        _GL_NODES[n] = np.polynomial.legendre.leggauss(n)
    return _GL_NODES[n]


@dataclass(frozen=True)
class ConstantMean:
    """Flat forecast mu(t) = level."""

    level: float

    def at(self, t):
        t = np.asarray(t, dtype=float)
        out = np.full_like(t, float(self.level))
        return float(out) if out.ndim == 0 else out

    def weighted_integral(self, kappa: float, t0, t):
        """kappa * int_{t0}^{t} exp(-kappa (t - s)) mu(s) ds, in closed form."""
        delta = np.asarray(t, dtype=float) - np.asarray(t0, dtype=float)
        out = -self.level * np.expm1(-kappa * delta)
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class SinusoidMean:
    """Sinusoidal forecast mu(t) = offset + amplitude * sin(angular_freq * t)."""

    offset: float
    amplitude: float
    angular_freq: float

    def at(self, t):
        t = np.asarray(t, dtype=float)
        out = self.offset + self.amplitude * np.sin(self.angular_freq * t)
        return float(out) if out.ndim == 0 else out

    def weighted_integral(self, kappa: float, t0, t):
        """kappa * int_{t0}^{t} exp(-kappa (t - s)) mu(s) ds, in closed form."""
        t0 = np.asarray(t0, dtype=float)
        t = np.asarray(t, dtype=float)
        w = self.angular_freq
        decay = np.exp(-kappa * (t - t0))
        const_part = -self.offset * np.expm1(-kappa * (t - t0))
        osc = kappa * np.sin(w * t) - w * np.cos(w * t)
        osc0 = kappa * np.sin(w * t0) - w * np.cos(w * t0)
        sin_part = self.amplitude * kappa / (kappa ** 2 + w ** 2) * (osc - decay * osc0)
        out = const_part + sin_part
        return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class TabulatedMean:
    """Forecast given at knots, linearly interpolated in between.

    The knot range must cover every time the forecast is evaluated at;
    there is no extrapolation.
    """

    times: np.ndarray
    values: np.ndarray
    nodes_per_segment: int = 32
    rel_tol: float = 1e-10

    def __post_init__(self) -> None:
        times = np.atleast_1d(np.asarray(self.times, dtype=float))
        values = np.atleast_1d(np.asarray(self.values, dtype=float))
        if times.ndim != 1 or times.shape != values.shape or times.size < 2:
            raise ValueError("tabulated mean needs matching 1-d knot arrays (>= 2 knots)")
        if np.any(np.diff(times) <= 0):
            raise ValueError("tabulated mean knots must be strictly increasing")
        if self.nodes_per_segment < 32:
            raise ValueError("nodes_per_segment must be >= 32")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def _check_range(self, t: np.ndarray) -> None:
        if np.any(t < self.times[0] - 1e-12) or np.any(t > self.times[-1] + 1e-12):
            raise ValueError("time outside tabulated mean range")

    def at(self, t):
        t = np.asarray(t, dtype=float)
        self._check_range(np.atleast_1d(t))
        out = np.interp(t, self.times, self.values)
        return float(out) if out.ndim == 0 else out

    def _quadrature(self, kappa: float, t0: float, t1: float, n: int) -> float:
        # Composite Gauss-Legendre split at the interior knots, where the
        # integrand kappa * exp(-kappa (t1 - s)) * mu(s) loses smoothness.
        if t1 == t0:
            return 0.0
        cuts = self.times[(self.times > t0) & (self.times < t1)]
        edges = np.concatenate(([t0], cuts, [t1]))
        xi, wi = _gauss_legendre(n)
        total = 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            half = 0.5 * (b - a)
            s = half * xi + 0.5 * (a + b)
            f = kappa * np.exp(-kappa * (t1 - s)) * np.interp(s, self.times, self.values)
            total += half * float(np.dot(wi, f))
        return total

    def weighted_integral(self, kappa: float, t0, t):
        t0a = np.atleast_1d(np.asarray(t0, dtype=float))
        ta = np.atleast_1d(np.asarray(t, dtype=float))
        t0a, ta = np.broadcast_arrays(t0a, ta)
        self._check_range(t0a)
        self._check_range(ta)
        out = np.empty(ta.shape)
        scale_floor = 1e-300
        for idx in np.ndindex(ta.shape):
            coarse = self._quadrature(kappa, float(t0a[idx]), float(ta[idx]),
                                      self.nodes_per_segment)
            fine = self._quadrature(kappa, float(t0a[idx]), float(ta[idx]),
                                    2 * self.nodes_per_segment)
            scale = max(abs(fine), abs(coarse), scale_floor)
            if abs(fine - coarse) > self.rel_tol * scale + 1e-14:
                raise QuadratureError(
                    f"tabulated-mean quadrature did not converge: "
                    f"|{fine} - {coarse}| > {self.rel_tol} (relative)"
                )
            out[idx] = fine
        if np.asarray(t).ndim == 0 and np.asarray(t0).ndim == 0:
            return float(out.reshape(-1)[0])
        return out


MeanFunction = Union[ConstantMean, SinusoidMean, TabulatedMean]


# ---------------------------------------------------------------------------
# Process parameters, paths and noise records
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DemandParams:
    """All coefficients of the demand SDE."""

    kappa: float
    sigma: float
    mean: MeanFunction
    y0: float
    jump: JumpSpec = JumpSpec.none()

    def __post_init__(self) -> None:
        if not math.isfinite(self.kappa) or self.kappa <= 0:
            raise ValueError("kappa must be finite and > 0")
        if not math.isfinite(self.sigma) or self.sigma < 0:
            raise ValueError("sigma must be finite and >= 0")
        if not math.isfinite(self.y0):
            raise ValueError("y0 must be finite")


@dataclass(frozen=True)
class StepNoise:
    """Noise consumed by one exact transition: one standard-normal draw plus
    the jump events that occurred inside the step."""

    gaussian: float
    jump_times: np.ndarray
    jump_heights: np.ndarray


@dataclass(frozen=True)
class DemandPath:
    """One sampled trajectory together with the noise that generated it.

    ``gaussians`` holds one standard-normal draw per grid step; jump events
    are stored globally with strictly increasing times.  Rebuilding the
    values from this record (see :func:`rebuild_values`) is bit-exact.
    """

    times: np.ndarray
    values: np.ndarray
    gaussians: np.ndarray
    jump_times: np.ndarray
    jump_heights: np.ndarray

    def index_of(self, t: float) -> int:
        """Index of grid time ``t``; raises if ``t`` is not on the grid."""
        i = int(np.searchsorted(self.times, t - 1e-12))
        if i >= self.times.size or abs(self.times[i] - t) > 1e-9:
            raise ValueError(f"time {t} is not on the path grid")
        return i

    def value_at(self, t: float) -> float:
        return float(self.values[self.index_of(t)])


def substream(seed: int, index: int) -> np.random.Generator:
    """Independent generator for path ``index`` of ensemble ``seed``.

    Derived from the pair ``(seed, index)`` so ensemble members do not depend
    on generation order or parallel scheduling.
    """
    return np.random.default_rng(np.random.SeedSequence((seed, index)))


# ---------------------------------------------------------------------------
# Exact transition sampling
# ---------------------------------------------------------------------------

def _step_coeffs(params: DemandParams, t0: float, t1: float) -> tuple[float, float, float]:
    """Deterministic pieces of the exact transition over [t0, t1]:
    decay factor, mean-tracking drift, and Gaussian standard deviation."""
    kappa = params.kappa
    delta = t1 - t0
    decay = math.exp(-kappa * delta)
    drift = float(params.mean.weighted_integral(kappa, t0, t1))
    # -expm1 keeps 1 - e^{-2 kappa delta} accurate for tiny steps
    sd = params.sigma * math.sqrt(-math.expm1(-2.0 * kappa * delta) / (2.0 * kappa))
    return decay, drift, sd


def _jump_decay_sum(kappa: float, t1: float, jump_times: np.ndarray,
                    jump_heights: np.ndarray) -> float:
    return float(np.sum(jump_heights * np.exp(-kappa * (t1 - jump_times))))


def _apply_step(y: float, decay: float, drift: float, sd: float, gaussian: float,
                kappa: float, t1: float, jump_times: np.ndarray,
                jump_heights: np.ndarray) -> float:
    out = y * decay + drift + sd * gaussian
    if jump_times.size:
        out += _jump_decay_sum(kappa, t1, jump_times, jump_heights)
    return out


def draw_step_noise(params: DemandParams, t: float, delta: float,
                    rng: np.random.Generator) -> StepNoise:
    """Draw the noise for one transition of length ``delta`` starting at ``t``.

    Jump count is Poisson(nu * delta); jump times are uniform on (t, t+delta].
    """
    if delta <= 0:
        raise ValueError("step length must be > 0")
    count = int(rng.poisson(params.jump.intensity * delta))
    # 1 - U maps [0, 1) draws onto (0, 1], i.e. times in (t, t + delta]
    jump_times = np.sort(t + delta * (1.0 - rng.random(count)))
    jump_heights = params.jump.height_law.sample(rng, count)
    gaussian = float(rng.standard_normal())
    return StepNoise(gaussian=gaussian, jump_times=jump_times, jump_heights=jump_heights)


def exact_step(params: DemandParams, t: float, y: float, delta: float,
               noise: StepNoise) -> float:
    """Exact transition of the demand from (t, y) to time t + delta.

    Returns

        y e^{-kappa delta} + kappa int_t^{t+delta} e^{-kappa (t+delta-s)} mu(s) ds
        + sigma * sqrt((1 - e^{-2 kappa delta}) / (2 kappa)) * xi
        + sum_i gamma_i e^{-kappa (t+delta - t_i)}

    with xi and the jump events taken from ``noise``.
    """
    if delta <= 0:
        raise ValueError("step length must be > 0")
    decay, drift, sd = _step_coeffs(params, t, t + delta)
    return _apply_step(y, decay, drift, sd, noise.gaussian, params.kappa,
                       t + delta, noise.jump_times, noise.jump_heights)


def _validate_grid(times: np.ndarray) -> np.ndarray:
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or times.size < 1:
        raise ValueError("time grid must be a non-empty 1-d array")
    if times[0] != 0.0:
        raise ValueError("time grid must start at 0")
    if np.any(np.diff(times) <= 0):
        raise ValueError("time grid must be strictly increasing")
    return times


_NO_JUMPS = np.empty(0)


class _GridCoeffs:
    """Per-step transition constants shared by all paths on one grid.

    Kept as plain-float lists: the per-path recursion runs in Python and
    numpy scalar arithmetic would dominate its cost.
    """

    def __init__(self, params: DemandParams, times: np.ndarray):
        steps = [_step_coeffs(params, float(times[k]), float(times[k + 1]))
                 for k in range(times.size - 1)]
        self.decay = [s[0] for s in steps]
        self.drift = [s[1] for s in steps]
        self.sd = [s[2] for s in steps]
        self.t_ends = [float(t) for t in times[1:]]
        self.lam = params.jump.intensity * np.diff(times)


def _draw_grid_noise(params: DemandParams, times: np.ndarray, lam: np.ndarray,
                     rng: np.random.Generator):
    """Batched noise for a whole path: per-step counts first, then gaussians,
    then jump times and heights step by step."""
    nsteps = times.size - 1
    counts = rng.poisson(lam) if nsteps else np.empty(0, dtype=int)
    gaussians = rng.standard_normal(nsteps)
    jt_steps: list[np.ndarray] = [_NO_JUMPS] * nsteps
    jh_steps: list[np.ndarray] = [_NO_JUMPS] * nsteps
    for k in np.flatnonzero(counts):
        c = int(counts[k])
        t0, t1 = times[k], times[k + 1]
        jt_steps[k] = np.sort(t0 + (t1 - t0) * (1.0 - rng.random(c)))
        jh_steps[k] = params.jump.height_law.sample(rng, c)
    return gaussians, jt_steps, jh_steps


def _build_path(params: DemandParams, times: np.ndarray, coeffs: _GridCoeffs,
                gaussians: np.ndarray, jt_steps: list[np.ndarray],
                jh_steps: list[np.ndarray], y0: float) -> DemandPath:
    kappa = params.kappa
    values = np.empty(times.size)
    values[0] = y0
    y = float(y0)
    decay, drift, sd = coeffs.decay, coeffs.drift, coeffs.sd
    t_ends = coeffs.t_ends
    xi = gaussians.tolist()
    for k in range(times.size - 1):
        y = _apply_step(y, decay[k], drift[k], sd[k], xi[k], kappa,
                        t_ends[k], jt_steps[k], jh_steps[k])
        values[k + 1] = y
    if jt_steps:
        jump_times = np.concatenate(jt_steps)
        jump_heights = np.concatenate(jh_steps)
    else:
        jump_times = np.empty(0)
        jump_heights = np.empty(0)
    return DemandPath(times=times, values=values, gaussians=gaussians,
                      jump_times=jump_times, jump_heights=jump_heights)


def sample_path(params: DemandParams, times, rng: np.random.Generator) -> DemandPath:
    """Sample one trajectory on the given grid using exact transitions.

    Deterministic for a fixed generator state; the returned path records all
    noise so that :func:`rebuild_values` reproduces ``values`` bit-exactly.
    """
    times = _validate_grid(times)
    coeffs = _GridCoeffs(params, times)
    gaussians, jt_steps, jh_steps = _draw_grid_noise(params, times, coeffs.lam, rng)
    return _build_path(params, times, coeffs, gaussians, jt_steps, jh_steps, params.y0)


def sample_paths(params: DemandParams, times, n_paths: int, seed: int) -> list[DemandPath]:
    """Sample ``n_paths`` independent trajectories.

    Path ``i`` is drawn from ``substream(seed, i)``, so the ensemble is
    independent of generation order and identical to calling
    :func:`sample_path` path by path.
    """
    times = _validate_grid(times)
    if n_paths < 1:
        raise ValueError("n_paths must be >= 1")
    coeffs = _GridCoeffs(params, times)
    out = []
    for i in range(n_paths):
        rng = substream(seed, i)
        gaussians, jt_steps, jh_steps = _draw_grid_noise(params, times, coeffs.lam, rng)
        out.append(_build_path(params, times, coeffs, gaussians, jt_steps,
                               jh_steps, params.y0))
    return out


def _same_but_y0(a: DemandParams, b: DemandParams) -> bool:
    if (a.kappa, a.sigma) != (b.kappa, b.sigma):
        return False
    if a.jump != b.jump:
        return False
    if type(a.mean) is not type(b.mean):
        return False
    if isinstance(a.mean, TabulatedMean):
        return (np.array_equal(a.mean.times, b.mean.times)
                and np.array_equal(a.mean.values, b.mean.values))
    return a.mean == b.mean


def sample_ensemble(params_list: list[DemandParams], times,
                    rng: np.random.Generator) -> list[DemandPath]:
    """Sample one path per parameter set, all from a single shared noise record.

    The parameter sets may differ only in their initial value, so the
    resulting paths show identical Brownian increments and jump events and
    differ exactly by (y0_a - y0_b) e^{-kappa t}.
    """
    if not params_list:
        raise ValueError("params_list must not be empty")
    base = params_list[0]
    for p in params_list[1:]:
        if not _same_but_y0(base, p):
            raise ValueError("ensemble members may differ only in y0")
    times = _validate_grid(times)
    coeffs = _GridCoeffs(base, times)
    gaussians, jt_steps, jh_steps = _draw_grid_noise(base, times, coeffs.lam, rng)
    return [
        _build_path(p, times, coeffs, gaussians, jt_steps, jh_steps, p.y0)
        for p in params_list
    ]


def euler_path(params: DemandParams, times, rng: np.random.Generator) -> DemandPath:
    """Euler-Maruyama sampler, used only as an independent discretisation oracle.

    Y_{k+1} = Y_k + kappa (mu(t_k) - Y_k) dt + sigma sqrt(dt) xi + sum of jump
    heights in the step.  Requires kappa * dt < 1 on every step.
    """
    times = _validate_grid(times)
    deltas = np.diff(times)
    if deltas.size and np.max(params.kappa * deltas) >= 1.0:
        raise ValueError("Euler scheme unstable: kappa * dt must be < 1")
    lam = params.jump.intensity * deltas
    gaussians, jt_steps, jh_steps = _draw_grid_noise(params, times, lam, rng)
    mu_vals = np.asarray(params.mean.at(times[:-1]), dtype=float).reshape(-1).tolist()
    values = np.empty(times.size)
    values[0] = params.y0
    y = float(params.y0)
    kappa, sigma = params.kappa, params.sigma
    dts = deltas.tolist()
    xi = gaussians.tolist()
    for k in range(times.size - 1):
        dt = dts[k]
        y = y + kappa * (mu_vals[k] - y) * dt + sigma * math.sqrt(dt) * xi[k]
        if jt_steps[k].size:
            y += float(np.sum(jh_steps[k]))
        values[k + 1] = y
    if jt_steps:
        jump_times = np.concatenate(jt_steps)
        jump_heights = np.concatenate(jh_steps)
    else:
        jump_times = np.empty(0)
        jump_heights = np.empty(0)
    return DemandPath(times=times, values=values, gaussians=gaussians,
                      jump_times=jump_times, jump_heights=jump_heights)


def _split_jumps(path: DemandPath) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Reassign the global jump record to grid steps (t_k, t_{k+1}]."""
    nsteps = path.times.size - 1
    idx = np.searchsorted(path.times, path.jump_times, side="left") - 1
    jt_steps = [path.jump_times[idx == k] for k in range(nsteps)]
    jh_steps = [path.jump_heights[idx == k] for k in range(nsteps)]
    return jt_steps, jh_steps


def rebuild_values(params: DemandParams, path: DemandPath,
                   method: str = "exact") -> np.ndarray:
    """Recompute path values from the stored noise record.

    For paths produced by the matching sampler the result is bit-identical
    to ``path.values``.
    """
    jt_steps, jh_steps = _split_jumps(path)
    if method == "exact":
        coeffs = _GridCoeffs(params, path.times)
        rebuilt = _build_path(params, path.times, coeffs, path.gaussians,
                              jt_steps, jh_steps, float(path.values[0]))
        return rebuilt.values
    if method == "euler":
        times = path.times
        mu_vals = np.asarray(params.mean.at(times[:-1]),
                             dtype=float).reshape(-1).tolist()
        values = np.empty(times.size)
        values[0] = path.values[0]
        y = float(path.values[0])
        kappa, sigma = params.kappa, params.sigma
        dts = np.diff(times).tolist()
        xi = path.gaussians.tolist()
        for k in range(times.size - 1):
            dt = dts[k]
            y = y + kappa * (mu_vals[k] - y) * dt + sigma * math.sqrt(dt) * xi[k]
            if jt_steps[k].size:
                y += float(np.sum(jh_steps[k]))
            values[k + 1] = y
        return values
    raise ValueError(f"unknown rebuild method {method!r}")
