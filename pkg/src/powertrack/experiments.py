"""Scenario-driven experiment runners with CSV artifacts.

A :class:`Scenario` bundles everything one run needs: demand parameters,
transport speed and horizon, lattice resolution, an optional update
schedule, the Monte-Carlo budget and the master seed.  Runners emit plain
CSV files (one header line, repr-formatted floats) so that plots can be
produced by any external tool; identical scenarios and seeds produce
byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import norm

from .control import UpdateSchedule
from .costopt import (
    Cm1Policy,
    Cm2Policy,
    Cm3Policy,
    DeterministicDemand,
    cumrmse_analytic,
    mc_cost_estimate,
    minimize_control_direct,
    sequential_update_solve,
)
from .demand import (
    ConstantHeight,
    ConstantMean,
    DemandParams,
    JumpSpec,
    LognormalHeight,
    MeanFunction,
    NormalHeight,
    SinusoidMean,
    TabulatedMean,
    sample_path,
    sample_paths,
    substream,
)
from .moments import conditional_variance, first_moment
from .transport import ControlSignal, Grid, upwind_solve

__all__ = [
    "ConfigError",
    "Scenario",
    "PRESET_NAMES",
    "preset",
    "scenario_grid",
    "scenario_schedule",
    "run_scenario",
    "confidence_bands",
    "write_bands",
    "convergence_study",
    "write_convergence",
    "load_config",
    "scenario_from_config",
]

ARTIFACTS = ("paths", "control", "bands", "cost")


class ConfigError(ValueError):
    """Invalid scenario configuration; names the offending field."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class Scenario:
    """Complete description of one experiment run."""

    name: str
    speed: float
    horizon: float
    dx: float
    params: DemandParams | None = None
    profile: MeanFunction | None = None  # set for deterministic demand
    update_interval: float | None = None
    mc_paths: int = 1000
    seed: int = 7
    n_display_paths: int = 5
    outputs: tuple[str, ...] = ARTIFACTS
    levels: tuple[float, ...] = (0.5, 0.9, 0.975)

    @property
    def demand_mode(self) -> str:
        return "deterministic" if self.profile is not None else "stochastic"


PRESET_NAMES = ("PS1", "PS2", "PS3", "deterministic-fig5")

_TWO_PI = 2.0 * np.pi


def preset(name: str) -> Scenario:
    """Built-in scenarios used throughout the test suite and demos."""
    base_mean = SinusoidMean(offset=2.0, amplitude=3.0, angular_freq=_TWO_PI)
    if name == "PS1":
        params = DemandParams(kappa=1.0, sigma=2.0, mean=base_mean, y0=1.0,
                              jump=JumpSpec(5.0, ConstantHeight(0.0)))
        return Scenario(name="PS1", speed=4.0, horizon=1.0, dx=0.1,
                        params=params, update_interval=0.125)
    if name == "PS2":
        ps1 = preset("PS1")
        return replace(ps1, name="PS2", params=replace(ps1.params, kappa=3.0))
    if name == "PS3":
        ps2 = preset("PS2")
        return replace(ps2, name="PS3",
                       params=replace(ps2.params,
                                      jump=JumpSpec(5.0, ConstantHeight(1.0))))
    if name == "deterministic-fig5":
        return Scenario(name="deterministic-fig5", speed=2.0, horizon=5.0,
                        dx=0.5, profile=SinusoidMean(2.0, 1.0, 0.5 * np.pi),
                        outputs=("control", "cost"))
    raise ConfigError("preset", f"unknown preset {name!r}; "
                                f"choose one of {', '.join(PRESET_NAMES)}")


def scenario_grid(scenario: Scenario) -> Grid:
    try:
        return Grid.make(scenario.speed, scenario.dx, scenario.horizon)
    except ValueError as err:
        raise ConfigError("dx", str(err)) from None


def scenario_schedule(scenario: Scenario, grid: Grid) -> UpdateSchedule | None:
    if scenario.update_interval is None:
        return None
    try:
        return UpdateSchedule.regular(scenario.update_interval,
                                      grid.horizon - grid.delay, grid.dt)
    except ValueError as err:
        raise ConfigError("update_interval", str(err)) from None


def _validate_scenario(scenario: Scenario) -> None:
    if scenario.demand_mode == "stochastic" and scenario.params is None:
        raise ConfigError("params", "stochastic scenarios need demand parameters")
    if scenario.mc_paths < 1:
        raise ConfigError("paths", "Monte-Carlo budget must be >= 1")
    if scenario.seed < 0:
        raise ConfigError("seed", "seed must be >= 0")
    for level in scenario.levels:
        if not (0.0 < level < 1.0):
            raise ConfigError("levels", f"confidence level {level} outside (0, 1)")
    for artifact in scenario.outputs:
        if artifact not in ARTIFACTS:
            raise ConfigError("outputs", f"unknown artifact {artifact!r}")


# ---------------------------------------------------------------------------
# CSV helpers
# ---------------------------------------------------------------------------

def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def _write_csv(path: Path, header: Sequence[str],
               rows: Iterable[Sequence]) -> Path:
    with open(path, "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(x) for x in row) + "\n")
    return path


# ---------------------------------------------------------------------------
# Confidence bands
# ---------------------------------------------------------------------------

def confidence_bands(params: DemandParams, times, levels, mc_paths: int,
                     seed: int) -> np.ndarray:
    """Demand quantile curves, one row per level.

    When jumps cannot move the path the marginal law is Gaussian and the
    quantiles are exact (mean + z sqrt(var)); otherwise they are empirical
    quantiles over a seeded Monte-Carlo ensemble.
    """
    times = np.asarray(times, dtype=float)
    levels = [float(lv) for lv in levels]
    for lv in levels:
        if not (0.0 < lv < 1.0):
            raise ValueError(f"confidence level {lv} outside (0, 1)")
    if not params.jump.active:
        mean = np.atleast_1d(first_moment(params, times))
        var = np.atleast_1d(conditional_variance(params, times))
        sd = np.sqrt(var)
        return np.vstack([mean + norm.ppf(lv) * sd for lv in levels])
    paths = sample_paths(params, times, mc_paths, seed)
    values = np.stack([p.values for p in paths])
    return np.quantile(values, levels, axis=0)


def write_bands(scenario: Scenario, out_dir: str | Path) -> Path:
    """Write the ``bands`` artifact: demand mean and quantile curves."""
    _validate_scenario(scenario)
    if scenario.demand_mode != "stochastic":
        raise ConfigError("demand_mode", "bands need a stochastic demand")
    grid = scenario_grid(scenario)
    times = grid.times()
    bands = confidence_bands(scenario.params, times, scenario.levels,
                             scenario.mc_paths, scenario.seed)
    mean = np.atleast_1d(first_moment(scenario.params, times))
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = ["time", "mean"] + [f"q{lv}" for lv in scenario.levels]
    rows = ([times[i], mean[i]] + [bands[j, i] for j in range(len(scenario.levels))]
            for i in range(times.size))
    return _write_csv(out_dir / "bands.csv", header, rows)


# ---------------------------------------------------------------------------
# Scenario runner
# ---------------------------------------------------------------------------

def _hold_series(u: ControlSignal, grid: Grid) -> np.ndarray:
    """Control values on the full lattice, None past the control horizon."""
    full = [None] * (grid.nt + 1)
    full[: u.values.size] = list(u.values)
    return full


def _control_artifact_stochastic(scenario: Scenario, grid: Grid,
                                 out_dir: Path) -> Path:
    params = scenario.params
    times = grid.times()
    mean = np.atleast_1d(first_moment(params, times))
    u1 = minimize_control_direct(params, grid)
    y1 = upwind_solve(grid, None, u1).outflow
    header = ["time", "demand_mean", "u_cm1", "y_cm1"]
    columns = [times, mean, _hold_series(u1, grid), y1]

    schedule = scenario_schedule(scenario, grid)
    if schedule is not None:
        path = sample_path(params, times, substream(scenario.seed, 0))
        u2, field2, _ = sequential_update_solve(params, grid, schedule, path)
        u3 = Cm3Policy(params).control_for(path, grid)
        y3 = upwind_solve(grid, None, u3).outflow
        header += ["path", "u_cm2", "y_cm2", "u_cm3", "y_cm3"]
        columns += [path.values, _hold_series(u2, grid), field2.outflow,
                    _hold_series(u3, grid), y3]
    rows = ([col[i] for col in columns] for i in range(times.size))
    return _write_csv(out_dir / "control.csv", header, rows)


def _control_artifact_deterministic(scenario: Scenario, grid: Grid,
                                    out_dir: Path) -> Path:
    model = DeterministicDemand(scenario.profile)
    times = grid.times()
    demand = np.atleast_1d(np.asarray(model.mean_at(times), dtype=float))
    u = minimize_control_direct(model, grid)
    y = upwind_solve(grid, None, u).outflow
    u_full = _hold_series(u, grid)
    rows = ([times[i], demand[i], u_full[i], y[i]] for i in range(times.size))
    return _write_csv(out_dir / "control.csv",
                      ["time", "demand", "u", "y"], rows)


def _paths_artifact(scenario: Scenario, grid: Grid, out_dir: Path) -> Path:
    params = scenario.params
    times = grid.times()
    n = min(scenario.n_display_paths, scenario.mc_paths)
    paths = sample_paths(params, times, n, scenario.seed)
    mean = np.atleast_1d(first_moment(params, times))
    header = ["time", "mean"] + [f"path_{j}" for j in range(n)]
    rows = ([times[i], mean[i]] + [p.values[i] for p in paths]
            for i in range(times.size))
    return _write_csv(out_dir / "paths.csv", header, rows)


def _cost_artifact_stochastic(scenario: Scenario, grid: Grid,
                              out_dir: Path) -> Path:
    params = scenario.params
    schedule = scenario_schedule(scenario, grid)
    paths = sample_paths(params, grid.times(), max(scenario.mc_paths, 2),
                         scenario.seed)
    methods: list[tuple[str, object]] = [("CM1", Cm1Policy(params))]
    if schedule is not None:
        methods.append(("CM2", Cm2Policy(params, schedule)))
    methods.append(("CM3", Cm3Policy(params)))
    rows = []
    for name, policy in methods:
        analytic = cumrmse_analytic(params, grid.speed, name, grid.horizon,
                                    update_interval=scenario.update_interval)
        report = mc_cost_estimate(paths, grid, policy)
        rows.append([name, analytic, report.cumrmse, report.cumrmse_se,
                     report.expected_cost, report.expected_cost_se])
    header = ["method", "cumrmse_analytic", "cumrmse_mc", "cumrmse_mc_se",
              "expected_cost_mc", "expected_cost_mc_se"]
    with open(out_dir / "cost.csv", "w", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(row[0] + "," + ",".join(_fmt(x) for x in row[1:]) + "\n")
    return out_dir / "cost.csv"


def _cost_artifact_deterministic(scenario: Scenario, grid: Grid,
                                 out_dir: Path) -> Path:
    from .costopt import deterministic_cost, minimize_control

    model = DeterministicDemand(scenario.profile)
    u = minimize_control(model, grid)
    y = upwind_solve(grid, None, u).outflow
    demand = np.atleast_1d(np.asarray(
        model.mean_at(grid.output_times()), dtype=float))
    sup_err = float(np.max(np.abs(y[grid.delay_steps:] - demand)))
    report = deterministic_cost(model, grid, u)
    return _write_csv(out_dir / "cost.csv",
                      ["sup_tracking_error", "expected_cost", "cumrmse"],
                      [[sup_err, report.expected_cost, report.cumrmse]])


def run_scenario(scenario: Scenario, out_dir: str | Path) -> dict[str, Path]:
    """Run the requested pipeline and write one CSV per requested artifact.

    Deterministic given (scenario, seed): repeated runs produce byte-identical
    files.
    """
    _validate_scenario(scenario)
    grid = scenario_grid(scenario)
    scenario_schedule(scenario, grid)  # alignment check up front
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: dict[str, Path] = {}
    for artifact in scenario.outputs:
        if scenario.demand_mode == "deterministic":
            if artifact == "control":
                written[artifact] = _control_artifact_deterministic(
                    scenario, grid, out_dir)
            elif artifact == "cost":
                written[artifact] = _cost_artifact_deterministic(
                    scenario, grid, out_dir)
            # paths/bands are meaningless without randomness; skip quietly
            continue
        if artifact == "paths":
            written[artifact] = _paths_artifact(scenario, grid, out_dir)
        elif artifact == "control":
            written[artifact] = _control_artifact_stochastic(
                scenario, grid, out_dir)
        elif artifact == "bands":
            written[artifact] = write_bands(scenario, out_dir)
        elif artifact == "cost":
            written[artifact] = _cost_artifact_stochastic(scenario, grid, out_dir)
    return written


# ---------------------------------------------------------------------------
# Update-interval convergence study
# ---------------------------------------------------------------------------

def convergence_study(scenario: Scenario, update_intervals,
                      solver: str = "iterative") -> list[dict]:
    """Gap between the re-optimised scheduled control and the continuously
    informed one, on a single seeded path, for each update interval.

    The gap is the time integral of |y_scheduled - y_continuous| over the
    scored window; it shrinks to the solver tolerance as the interval
    approaches one lattice step.
    """
    _validate_scenario(scenario)
    if scenario.demand_mode != "stochastic":
        raise ConfigError("demand_mode", "convergence study needs a stochastic demand")
    grid = scenario_grid(scenario)
    params = scenario.params
    path = sample_path(params, grid.times(), substream(scenario.seed, 0))
    u3 = Cm3Policy(params).control_for(path, grid)
    y3 = upwind_solve(grid, None, u3).outflow
    out_t = grid.output_times()
    d0 = grid.delay_steps
    rows = []
    for dtup in update_intervals:
        try:
            schedule = UpdateSchedule.regular(float(dtup),
                                              grid.horizon - grid.delay, grid.dt)
        except ValueError as err:
            raise ConfigError("dtup", str(err)) from None
        _, field, _ = sequential_update_solve(params, grid, schedule, path,
                                              solver=solver)
        gap = float(np.trapezoid(np.abs(field.outflow[d0:] - y3[d0:]), out_t))
        rows.append({
            "update_interval": float(dtup),
            "lattice_steps": int(round(float(dtup) / grid.dt)),
            "cumrmse_gap": gap,
        })
    return rows


def write_convergence(scenario: Scenario, update_intervals,
                      out_dir: str | Path, solver: str = "iterative") -> Path:
    rows = convergence_study(scenario, update_intervals, solver=solver)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / "convergence.csv"
    with open(path, "w", newline="\n") as fh:
        fh.write("update_interval,lattice_steps,cumrmse_gap\n")
        for row in rows:
            fh.write(f"{_fmt(row['update_interval'])},{row['lattice_steps']},"
                     f"{_fmt(row['cumrmse_gap'])}\n")
    return path


# ---------------------------------------------------------------------------
# Config files
# ---------------------------------------------------------------------------

_MEAN_TYPES = ("constant", "sinusoid", "tabulated")
_HEIGHT_TYPES = ("constant", "normal", "lognormal")


def _mean_from_config(cfg: dict, field: str) -> MeanFunction:
    if not isinstance(cfg, dict) or "type" not in cfg:
        raise ConfigError(field, "expected a mapping with a 'type' key")
    kind = cfg["type"]
    try:
        if kind == "constant":
            return ConstantMean(level=float(cfg["level"]))
        if kind == "sinusoid":
            return SinusoidMean(offset=float(cfg["offset"]),
                                amplitude=float(cfg["amplitude"]),
                                angular_freq=float(cfg["angular_freq"]))
        if kind == "tabulated":
            return TabulatedMean(times=np.asarray(cfg["times"], dtype=float),
                                 values=np.asarray(cfg["values"], dtype=float))
    except KeyError as err:
        raise ConfigError(field, f"missing key {err.args[0]!r}") from None
    except (TypeError, ValueError) as err:
        raise ConfigError(field, str(err)) from None
    raise ConfigError(field, f"type must be one of {', '.join(_MEAN_TYPES)}")


def _jump_from_config(cfg: dict, field: str) -> JumpSpec:
    if not isinstance(cfg, dict):
        raise ConfigError(field, "expected a mapping")
    height_cfg = cfg.get("height", {"type": "constant", "value": 0.0})
    kind = height_cfg.get("type")
    try:
        if kind == "constant":
            law = ConstantHeight(float(height_cfg["value"]))
        elif kind == "normal":
            law = NormalHeight(float(height_cfg["loc"]), float(height_cfg["scale"]))
        elif kind == "lognormal":
            law = LognormalHeight(float(height_cfg["log_mean"]),
                                  float(height_cfg["log_std"]))
        else:
            raise ConfigError(f"{field}.height",
                              f"type must be one of {', '.join(_HEIGHT_TYPES)}")
        return JumpSpec(intensity=float(cfg.get("intensity", 0.0)), height_law=law)
    except KeyError as err:
        raise ConfigError(f"{field}.height", f"missing key {err.args[0]!r}") from None
    except (TypeError, ValueError) as err:
        if isinstance(err, ConfigError):
            raise
        raise ConfigError(field, str(err)) from None


_KNOWN_KEYS = {
    "name", "preset", "speed", "horizon", "dx", "kappa", "sigma", "y0",
    "mean", "jump", "update_interval", "paths", "seed", "outputs", "levels",
    "demand_mode", "profile", "n_display_paths",
}


def load_config(path: str | Path) -> dict:
    """Read a YAML scenario file (see README for the schema)."""
    import yaml

    with open(path) as fh:
        cfg = yaml.safe_load(fh)
    if cfg is None:
        cfg = {}
    if not isinstance(cfg, dict):
        raise ConfigError("config", "top level of the config must be a mapping")
    return cfg


def scenario_from_config(cfg: dict, *, preset_name: str | None = None,
                         seed: int | None = None, paths: int | None = None) -> Scenario:
    """Build a scenario from a config mapping plus CLI overrides.

    Flag values (preset, seed, paths) override the corresponding config
    entries; scalar config entries override preset fields.
    """
    for key in cfg:
        if key not in _KNOWN_KEYS:
            raise ConfigError(key, "unknown configuration key")
    chosen = preset_name or cfg.get("preset")
    scenario = preset(chosen) if chosen else Scenario(
        name=str(cfg.get("name", "custom")), speed=1.0, horizon=2.0, dx=0.1)

    updates: dict = {}
    if "name" in cfg:
        updates["name"] = str(cfg["name"])
    for field in ("speed", "horizon", "dx", "update_interval"):
        if field in cfg:
            updates[field] = None if cfg[field] is None else float(cfg[field])
    if "paths" in cfg:
        updates["mc_paths"] = int(cfg["paths"])
    if "seed" in cfg:
        updates["seed"] = int(cfg["seed"])
    if "n_display_paths" in cfg:
        updates["n_display_paths"] = int(cfg["n_display_paths"])
    if "outputs" in cfg:
        updates["outputs"] = tuple(str(a) for a in cfg["outputs"])
    if "levels" in cfg:
        updates["levels"] = tuple(float(lv) for lv in cfg["levels"])

    mode = cfg.get("demand_mode", scenario.demand_mode)
    if mode == "deterministic":
        profile = scenario.profile
        if "profile" in cfg:
            profile = _mean_from_config(cfg["profile"], "profile")
        if profile is None:
            raise ConfigError("profile", "deterministic demand needs a profile")
        updates["profile"] = profile
        updates["params"] = None
    elif mode == "stochastic":
        updates["profile"] = None
        base = scenario.params
        needs = [k for k in ("kappa", "sigma", "y0", "mean") if k in cfg]
        if base is None or needs or "jump" in cfg:
            try:
                kappa = float(cfg["kappa"]) if "kappa" in cfg else base.kappa
                sigma = float(cfg["sigma"]) if "sigma" in cfg else base.sigma
                y0 = float(cfg["y0"]) if "y0" in cfg else base.y0
                mean = (_mean_from_config(cfg["mean"], "mean")
                        if "mean" in cfg else base.mean)
                jump = (_jump_from_config(cfg["jump"], "jump")
                        if "jump" in cfg else base.jump)
            except AttributeError:
                raise ConfigError(
                    "params", "custom scenarios must define kappa, sigma, y0, "
                              "mean and jump (or start from a preset)") from None
            except (TypeError, ValueError) as err:
                if isinstance(err, ConfigError):
                    raise
                raise ConfigError("params", str(err)) from None
            try:
                updates["params"] = DemandParams(kappa=kappa, sigma=sigma,
                                                 mean=mean, y0=y0, jump=jump)
            except ValueError as err:
                raise ConfigError("params", str(err)) from None
    else:
        raise ConfigError("demand_mode",
                          "must be 'stochastic' or 'deterministic'")

    scenario = replace(scenario, **updates)
    if seed is not None:
        scenario = replace(scenario, seed=int(seed))
    if paths is not None:
        scenario = replace(scenario, mc_paths=int(paths))
    return scenario
