"""Physical drying game: dynamics f, energy rate e, terminal set and instance config.

Humidity x is a dimensionless moisture fraction, temperatures t are in °C, and the
disturbance α is a scalar chosen by "nature" once per step. Every evaluation
function broadcasts over numpy arrays so the solver can evaluate whole stage
tables at once.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from app.errors import ConfigError

logger = logging.getLogger(__name__)

DYNAMICS_KINDS = ("affine", "lewis")
OBJECTIVES = ("energy", "time")

# Round-off guard for terminal membership; Euler images of grid-aligned
# instances land within a few ulps of the boundary.
TERMINAL_ATOL = 1e-12


@dataclass(frozen=True)
class DryingDynamics:
    kind: str = "lewis"
    # affine: f = a*t + b*alpha + c
    a: float = 0.0
    b: float = 0.0
    c: float = 0.0
    # lewis: f = -k(t) * (x - alpha), k(t) = k_ref * exp(beta * (t - t_ref))
    k_ref: float = 0.0
    beta: float = 0.0
    t_ref: float = 0.0

    def rate_constant(self, t):
        return self.k_ref * np.exp(self.beta * (np.asarray(t, dtype=float) - self.t_ref))

    @property
    def frozen(self) -> bool:
        return self.kind == "affine" and self.a == 0 and self.b == 0 and self.c == 0


@dataclass(frozen=True)
class EnergyModel:
    c0: float = 0.0
    c1: float = 1.0
    t_amb: float = 20.0


@dataclass(frozen=True)
class TerminalSet:
    lo: float
    hi: float


@dataclass(frozen=True)
class StepRanges:
    control: tuple[float, float]
    disturbance: tuple[float, float]


@dataclass(frozen=True)
class StateGridSpec:
    x_min: float
    x_max: float
    points: int


@dataclass(frozen=True)
class GameConfig:
    horizon: float
    steps: int
    x0: float
    state_grid: StateGridSpec
    per_step: tuple[StepRanges, ...]
    control_points: int
    disturbance_points: int
    dynamics: DryingDynamics
    energy: EnergyModel
    terminal: TerminalSet
    objective: str = "energy"

    @property
    def delta(self) -> float:
        return self.horizon / self.steps

    def ranges(self, i: int) -> StepRanges:
        """Ranges of step i (1-based); a single entry is the global default."""
        if len(self.per_step) == 1:
            return self.per_step[0]
        return self.per_step[i - 1]

    @property
    def time_invariant(self) -> bool:
        return len(set(self.per_step)) <= 1

    def replace(self, **changes) -> GameConfig:
        return replace(self, **changes)

    def digest(self) -> str:
        canonical = json.dumps(config_to_dict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def eval_dynamics(dyn: DryingDynamics, x, t, alpha):
    if dyn.kind == "affine":
        return dyn.a * np.asarray(t, dtype=float) + dyn.b * np.asarray(alpha, dtype=float) + dyn.c
    # alpha plays the role of the equilibrium moisture content
    return -dyn.rate_constant(t) * (np.asarray(x, dtype=float) - alpha)


def euler_step(dyn: DryingDynamics, x, t, alpha, delta: float):
    """One explicit Euler step, unclamped; the solver owns clamping."""
    return x + delta * eval_dynamics(dyn, x, t, alpha)


def eval_energy_rate(en: EnergyModel, t, alpha=None, x=None):
    # alpha and x stay in the signature for state- or weather-dependent models
    return en.c0 + en.c1 * np.maximum(np.asarray(t, dtype=float) - en.t_amb, 0.0)


def in_terminal(ts: TerminalSet, x):
    x = np.asarray(x, dtype=float)
    inside = (x >= ts.lo - TERMINAL_ATOL) & (x <= ts.hi + TERMINAL_ATOL)
    return bool(inside) if inside.ndim == 0 else inside


def validate_config(cfg: GameConfig) -> ValidationReport:
    """Report every invariant violation of cfg plus soft warnings; never raises."""
    report = ValidationReport()
    bad = report.violations

    numbers = [cfg.horizon, cfg.x0, cfg.state_grid.x_min, cfg.state_grid.x_max,
               cfg.terminal.lo, cfg.terminal.hi, cfg.energy.c0, cfg.energy.c1, cfg.energy.t_amb,
               cfg.dynamics.a, cfg.dynamics.b, cfg.dynamics.c,
               cfg.dynamics.k_ref, cfg.dynamics.beta, cfg.dynamics.t_ref]
    for r in cfg.per_step:
        numbers.extend(r.control)
        numbers.extend(r.disturbance)
    if not all(math.isfinite(v) for v in numbers):
        bad.append("all numeric fields must be finite")

    if cfg.steps < 1:
        bad.append("steps must be ≥ 1")
    if not cfg.horizon > 0:
        bad.append("horizon must be > 0")

    grid = cfg.state_grid
    if grid.points < 2:
        bad.append("state grid needs ≥ 2 points")
    if not grid.x_min < grid.x_max:
        bad.append("state grid needs x_min < x_max")
    if grid.x_min < 0:
        bad.append("state grid needs x_min ≥ 0 (humidity is nonnegative)")
    if not grid.x_min <= cfg.x0 <= grid.x_max:
        bad.append("x0 must lie within [x_min, x_max]")

    ts = cfg.terminal
    if not ts.lo <= ts.hi:
        bad.append("terminal set: lo ≤ hi required")
    if ts.lo < 0:
        bad.append("terminal set: lo ≥ 0 required")
    if not (grid.x_min <= ts.lo and ts.hi <= grid.x_max):
        bad.append("terminal set must lie within [x_min, x_max]")

    if len(cfg.per_step) not in (1, max(cfg.steps, 1)):
        bad.append(f"per_step must hold 1 or {cfg.steps} entries, got {len(cfg.per_step)}")
    for i, r in enumerate(cfg.per_step, start=1):
        if not r.control[0] <= r.control[1]:
            bad.append(f"step {i}: control range needs t1 ≤ t2")
        if not r.disturbance[0] <= r.disturbance[1]:
            bad.append(f"step {i}: disturbance range needs α1 ≤ α2")
    if cfg.control_points < 1:
        bad.append("control_points must be ≥ 1")
    elif cfg.control_points < 2 and any(r.control[0] < r.control[1] for r in cfg.per_step):
        bad.append("control_points must be ≥ 2 for non-degenerate control ranges")
    if cfg.disturbance_points < 1:
        bad.append("disturbance_points must be ≥ 1")
    elif cfg.disturbance_points < 2 and any(r.disturbance[0] < r.disturbance[1] for r in cfg.per_step):
        bad.append("disturbance_points must be ≥ 2 for non-degenerate disturbance ranges")

    if cfg.energy.c0 < 0:
        bad.append("energy c0 must be ≥ 0")
    if cfg.energy.c1 < 0:
        bad.append("energy c1 must be ≥ 0")

    if cfg.dynamics.kind not in DYNAMICS_KINDS:
        bad.append(f"dynamics kind must be one of {DYNAMICS_KINDS}")
    elif cfg.dynamics.kind == "lewis" and not cfg.dynamics.k_ref > 0:
        bad.append("lewis dynamics: k_ref > 0 required")
    if cfg.objective not in OBJECTIVES:
        bad.append(f"objective must be one of {OBJECTIVES}")

    if cfg.dynamics.frozen:
        report.warnings.append("state frozen: affine dynamics with a = b = c = 0")

    if report.ok:
        _reachability_warnings(cfg, report)
    for w in report.warnings:
        logger.info("validation warning: %s", w)
    return report


def _reachability_warnings(cfg: GameConfig, report: ValidationReport) -> None:
    dyn = cfg.dynamics
    delta = cfg.delta
    lo = hi = cfg.x0
    reach_lo = reach_hi = cfg.x0
    k_max = 0.0
    for i in range(1, cfg.steps + 1):
        r = cfg.ranges(i)
        images = [
            euler_step(dyn, x, t, a, delta)
            for x in (lo, hi) for t in r.control for a in r.disturbance
        ]
        lo = min(max(float(min(images)), cfg.state_grid.x_min), cfg.state_grid.x_max)
        hi = min(max(float(max(images)), cfg.state_grid.x_min), cfg.state_grid.x_max)
        reach_lo, reach_hi = min(reach_lo, lo), max(reach_hi, hi)
        if dyn.kind == "lewis":
            k_max = max(k_max, float(np.max(dyn.rate_constant(r.control))))

    if reach_hi < cfg.terminal.lo or reach_lo > cfg.terminal.hi:
        report.warnings.append(
            f"terminal set [{cfg.terminal.lo}, {cfg.terminal.hi}] does not intersect the "
            f"reachable humidity range [{reach_lo:.6g}, {reach_hi:.6g}]"
        )
    if delta * k_max > 1:
        report.warnings.append(
            f"explicit Euler step overshoots equilibrium (Δ·k_max = {delta * k_max:.4g} > 1)"
        )


def parse_config(data: dict) -> GameConfig:
    """Build a GameConfig from its JSON document; collects every structural problem."""
    problems: list[str] = []
    if not isinstance(data, dict):
        raise ConfigError(["config document must be a JSON object"])

    def number(src: dict, key: str, where: str, default=None) -> float:
        value = src.get(key, default)
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            problems.append(f"{where}{key}: expected a number, got {value!r}")
            return math.nan
        return float(value)

    def integer(src: dict, key: str, where: str = "") -> int:
        value = src.get(key)
        if isinstance(value, bool) or not isinstance(value, int):
            problems.append(f"{where}{key}: expected an integer, got {value!r}")
            return 0
        return value

    def section(key: str) -> dict:
        value = data.get(key)
        if not isinstance(value, dict):
            problems.append(f"{key}: expected an object")
            return {}
        return value

    def pair(value, where: str) -> tuple[float, float]:
        if (not isinstance(value, (list, tuple)) or len(value) != 2
                or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)):
            problems.append(f"{where}: expected a [lo, hi] pair of numbers")
            return (math.nan, math.nan)
        return (float(value[0]), float(value[1]))

    grid = section("state_grid")
    state_grid = StateGridSpec(
        x_min=number(grid, "x_min", "state_grid."),
        x_max=number(grid, "x_max", "state_grid."),
        points=integer(grid, "points", "state_grid."),
    )

    raw_steps = data.get("per_step")
    per_step: list[StepRanges] = []
    if not isinstance(raw_steps, list) or not raw_steps:
        problems.append("per_step: expected a non-empty list")
    else:
        for i, item in enumerate(raw_steps, start=1):
            if not isinstance(item, dict):
                problems.append(f"per_step[{i}]: expected an object")
                continue
            per_step.append(StepRanges(
                control=pair(item.get("control"), f"per_step[{i}].control"),
                disturbance=pair(item.get("disturbance"), f"per_step[{i}].disturbance"),
            ))

    dyn = section("dynamics")
    kind = dyn.get("kind")
    if kind == "affine":
        dynamics = DryingDynamics(
            kind="affine",
            a=number(dyn, "a", "dynamics.", 0.0),
            b=number(dyn, "b", "dynamics.", 0.0),
            c=number(dyn, "c", "dynamics.", 0.0),
        )
    elif kind == "lewis":
        dynamics = DryingDynamics(
            kind="lewis",
            k_ref=number(dyn, "k_ref", "dynamics."),
            beta=number(dyn, "beta", "dynamics.", 0.0),
            t_ref=number(dyn, "t_ref", "dynamics.", 0.0),
        )
    else:
        problems.append(f"dynamics.kind: expected one of {DYNAMICS_KINDS}, got {kind!r}")
        dynamics = DryingDynamics()

    en = section("energy")
    energy = EnergyModel(
        c0=number(en, "c0", "energy.", 0.0),
        c1=number(en, "c1", "energy.", 0.0),
        t_amb=number(en, "t_amb", "energy.", 0.0),
    )
    term = section("terminal")
    terminal = TerminalSet(lo=number(term, "lo", "terminal."), hi=number(term, "hi", "terminal."))

    objective = data.get("objective", "energy")
    if objective not in OBJECTIVES:
        problems.append(f"objective: expected one of {OBJECTIVES}, got {objective!r}")

    cfg = GameConfig(
        horizon=number(data, "horizon", ""),
        steps=integer(data, "steps"),
        x0=number(data, "x0", ""),
        state_grid=state_grid,
        per_step=tuple(per_step),
        control_points=integer(data, "control_points"),
        disturbance_points=integer(data, "disturbance_points"),
        dynamics=dynamics,
        energy=energy,
        terminal=terminal,
        objective=objective,
    )
    if problems:
        raise ConfigError(problems)
    return cfg


def load_config(path: str | Path) -> GameConfig:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as e:
        raise ConfigError([f"cannot read config {path}: {e}"]) from e
    except json.JSONDecodeError as e:
        raise ConfigError([f"config {path} is not valid JSON: {e}"]) from e
    return parse_config(data)


def config_to_dict(cfg: GameConfig) -> dict:
    dyn = cfg.dynamics
    if dyn.kind == "affine":
        dynamics = {"kind": "affine", "a": dyn.a, "b": dyn.b, "c": dyn.c}
    else:
        dynamics = {"kind": dyn.kind, "k_ref": dyn.k_ref, "beta": dyn.beta, "t_ref": dyn.t_ref}
    return {
        "horizon": cfg.horizon,
        "steps": cfg.steps,
        "x0": cfg.x0,
        "state_grid": {
            "x_min": cfg.state_grid.x_min,
            "x_max": cfg.state_grid.x_max,
            "points": cfg.state_grid.points,
        },
        "per_step": [
            {"control": list(r.control), "disturbance": list(r.disturbance)} for r in cfg.per_step
        ],
        "control_points": cfg.control_points,
        "disturbance_points": cfg.disturbance_points,
        "dynamics": dynamics,
        "energy": {"c0": cfg.energy.c0, "c1": cfg.energy.c1, "t_amb": cfg.energy.t_amb},
        "terminal": {"lo": cfg.terminal.lo, "hi": cfg.terminal.hi},
        "objective": cfg.objective,
    }
