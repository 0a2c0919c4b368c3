"""Backward-induction min-max dynamic programming for the drying game.

The operator minimizes outside, nature maximizes inside knowing the operator's
step control. F_k(x) is the guaranteed cost with k steps to go; the terminal
set is absorbing, so F_k = 0 there for every k, and +inf marks states from
which the terminal set cannot be guaranteed.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from joblib import Parallel, delayed

import config
from app.discretize import (
    GameGrids,
    StateGrid,
    bracket_slope,
    clamp,
    grids_for,
    interp_value,
    snap_index,
    upper_value,
)
from app.errors import ConfigError, NotReachable
from app.model import (
    GameConfig,
    StateGridSpec,
    TerminalSet,
    eval_energy_rate,
    euler_step,
    in_terminal,
    validate_config,
)

logger = logging.getLogger(__name__)

UNREACHABLE = -1


@dataclass(frozen=True, eq=False)
class ValueTable:
    """values[k, j] = F_k at state node j, k = 0..n steps to go; reads inside the terminal set are 0."""

    values: np.ndarray
    grid: StateGrid
    terminal: TerminalSet | None = None

    @property
    def steps(self) -> int:
        return self.values.shape[0] - 1

    def slice(self, k: int) -> np.ndarray:
        return self.values[k]

    def value_at(self, x: float, k: int | None = None) -> float:
        if self.terminal is not None and in_terminal(self.terminal, x):
            return 0.0
        return interp_value(self.values[self.steps if k is None else k], self.grid, x)


@dataclass(frozen=True, eq=False)
class OperatorPolicy:
    """indices[i - 1, j] = control-grid index played at step i from node j; -1 marks infeasible nodes."""

    indices: np.ndarray
    grids: GameGrids

    @property
    def steps(self) -> int:
        return self.indices.shape[0]

    def control_index(self, i: int, node: int) -> int:
        # every control ties at +inf on an infeasible node; the lowest index wins
        return max(int(self.indices[i - 1, node]), 0)

    def control(self, i: int, node: int) -> float:
        return float(self.grids.controls[i - 1][self.control_index(i, node)])

    def temperatures(self) -> np.ndarray:
        """Per-step temperatures, nan on infeasible nodes."""
        out = np.full(self.indices.shape, np.nan)
        for i, ctrl in enumerate(self.grids.controls):
            row = self.indices[i]
            out[i, row >= 0] = ctrl[row[row >= 0]]
        return out

    def with_indices(self, indices: np.ndarray) -> OperatorPolicy:
        indices = np.array(indices, dtype=np.int64)
        indices.setflags(write=False)
        return OperatorPolicy(indices, self.grids)

    def same_as(self, other: OperatorPolicy) -> bool:
        return np.array_equal(self.indices, other.indices) and self.grids.matches(other.grids)


@dataclass(frozen=True, eq=False)
class NatureResponder:
    """indices[i - 1][j, c] = disturbance-grid index nature answers with at step i, node j, control c."""

    indices: tuple[np.ndarray, ...]
    grids: GameGrids

    def disturbance_index(self, i: int, node: int, control_index: int) -> int:
        return int(self.indices[i - 1][node, control_index])

    def disturbance(self, i: int, node: int, control_index: int) -> float:
        return float(self.grids.disturbances[i - 1][self.disturbance_index(i, node, control_index)])


@dataclass(frozen=True, eq=False)
class TimeValueTable:
    """counts[j] = minimum guaranteed number of steps from node j, UNREACHABLE if none."""

    counts: np.ndarray
    grid: StateGrid
    iterations: int
    converged_at: int | None
    terminal: TerminalSet | None = None

    def steps_at(self, x: float) -> int:
        if self.terminal is not None and in_terminal(self.terminal, x):
            return 0
        v = upper_value(np.where(self.counts < 0, np.inf, self.counts), self.grid, x)
        return UNREACHABLE if math.isinf(v) else int(v)


class EnergySolution(NamedTuple):
    table: ValueTable
    policy: OperatorPolicy
    responder: NatureResponder


class TimeSolution(NamedTuple):
    table: TimeValueTable
    policy: OperatorPolicy


class StageResult(NamedTuple):
    value: float
    control: float
    disturbance: float
    control_index: int
    disturbance_index: int


@dataclass(frozen=True)
class RefinementLevel:
    n: int
    delta_t: float
    dx: float
    value: float
    diff_from_prev: float
    bound: float


@dataclass(frozen=True)
class InterpolationBound:
    constant: float
    dx: float

    @property
    def value(self) -> float:
        return self.constant * self.dx


def _images(cfg: GameConfig, grids: GameGrids, xs: np.ndarray, i: int) -> np.ndarray:
    t = grids.controls[i - 1][None, :, None]
    a = grids.disturbances[i - 1][None, None, :]
    x = xs[:, None, None]
    images = clamp(grids.state, euler_step(cfg.dynamics, x, t, a, cfg.delta))
    return np.broadcast_to(images, (len(xs), t.shape[1], a.shape[2]))


def _tail(cfg: GameConfig, images: np.ndarray, values: np.ndarray) -> np.ndarray:
    # an image inside the terminal set ends the game there, whatever its grid bracket holds
    return np.where(in_terminal(cfg.terminal, images), 0.0, values)


def _stage_block(cfg: GameConfig, grids: GameGrids, xs: np.ndarray, i: int, f_prev: np.ndarray) -> np.ndarray:
    """Stage-plus-tail payoffs, shape (len(xs), |T_i|, |Q_i|)."""
    t = grids.controls[i - 1][None, :, None]
    a = grids.disturbances[i - 1][None, None, :]
    stage = cfg.delta * eval_energy_rate(cfg.energy, t, a, xs[:, None, None])
    images = _images(cfg, grids, xs, i)
    return stage + _tail(cfg, images, interp_value(f_prev, grids.state, images))


def _time_block(cfg: GameConfig, grids: GameGrids, xs: np.ndarray, i: int, n_prev: np.ndarray) -> np.ndarray:
    images = _images(cfg, grids, xs, i)
    return 1.0 + _tail(cfg, images, upper_value(n_prev, grids.state, images))


def _minmax(totals: np.ndarray):
    """Operator min over axis 1 of nature max over axis 2, lowest index on ties."""
    worst_idx = np.argmax(totals, axis=2)
    worst = np.take_along_axis(totals, worst_idx[..., None], axis=2)[..., 0]
    best_idx = np.argmin(worst, axis=1)
    best = worst[np.arange(worst.shape[0]), best_idx]
    best_idx = np.where(np.isinf(best), UNREACHABLE, best_idx)
    return best, best_idx, worst_idx


def _reduce_block(block, cfg, grids, xs, i, prev):
    return _minmax(block(cfg, grids, xs, i, prev))


def _backward_step(block, cfg: GameConfig, grids: GameGrids, i: int, prev: np.ndarray, workers: int):
    nodes = grids.state.nodes
    if workers <= 1:
        return _reduce_block(block, cfg, grids, nodes, i, prev)
    chunks = np.array_split(np.arange(len(nodes)), min(len(nodes), workers * 4))
    parts = Parallel(n_jobs=workers, prefer="threads")(
        delayed(_reduce_block)(block, cfg, grids, nodes[c], i, prev) for c in chunks
    )
    return tuple(np.concatenate([p[m] for p in parts]) for m in range(3))


def stage_payoffs(x: float, i: int, f_prev: np.ndarray, cfg: GameConfig, grids: GameGrids) -> np.ndarray:
    """Stage table at one state: rows are step-i controls, columns disturbances."""
    return _stage_block(cfg, grids, np.array([x], dtype=float), i, f_prev)[0]


def stage_minmax(x: float, i: int, f_prev: np.ndarray, cfg: GameConfig, grids: GameGrids) -> StageResult:
    controls, disturbances = grids.controls[i - 1], grids.disturbances[i - 1]
    if in_terminal(cfg.terminal, x):
        return StageResult(0.0, float(controls[0]), float(disturbances[0]), 0, 0)
    best, best_idx, worst_idx = _minmax(_stage_block(cfg, grids, np.array([x], dtype=float), i, f_prev))
    c = int(best_idx[0])
    if c == UNREACHABLE:
        return StageResult(math.inf, math.nan, math.nan, UNREACHABLE, UNREACHABLE)
    d = int(worst_idx[0, c])
    return StageResult(float(best[0]), float(controls[c]), float(disturbances[d]), c, d)


def _checked(cfg: GameConfig) -> None:
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigError(report.violations)


def backward_energy(cfg: GameConfig, grids: GameGrids | None = None, workers: int | None = None) -> EnergySolution:
    """Energy DP over the whole grid without the reachability check at x0."""
    _checked(cfg)
    grids = grids or grids_for(cfg)
    workers = config.WORKERS if workers is None else workers
    n, nodes = cfg.steps, grids.state.nodes
    terminal = in_terminal(cfg.terminal, nodes)

    values = np.empty((n + 1, len(nodes)))
    values[0] = np.where(terminal, 0.0, np.inf)
    policy = np.empty((n, len(nodes)), dtype=np.int64)
    responder: list[np.ndarray] = [None] * n
    for k in range(1, n + 1):
        i = n - k + 1
        best, best_idx, worst_idx = _backward_step(_stage_block, cfg, grids, i, values[k - 1], workers)
        best[terminal] = 0.0
        best_idx[terminal] = 0
        worst_idx[terminal] = 0
        values[k] = best
        policy[i - 1] = best_idx
        worst_idx.setflags(write=False)
        responder[i - 1] = worst_idx
        logger.debug("energy DP k=%d: %d feasible nodes", k, int(np.isfinite(best).sum()))

    values.setflags(write=False)
    policy.setflags(write=False)
    return EnergySolution(
        ValueTable(values, grids.state, cfg.terminal),
        OperatorPolicy(policy, grids),
        NatureResponder(tuple(responder), grids),
    )


def solve_energy(cfg: GameConfig, grids: GameGrids | None = None, workers: int | None = None) -> EnergySolution:
    solution = backward_energy(cfg, grids, workers)
    value = solution.table.value_at(cfg.x0)
    if math.isinf(value):
        raise NotReachable(
            f"terminal set [{cfg.terminal.lo}, {cfg.terminal.hi}] cannot be guaranteed from "
            f"x0={cfg.x0} within {cfg.steps} steps (standing assumption: the terminal set is "
            "reached for any control and any external parameters)"
        )
    logger.info("guaranteed energy F_%d(%g) = %.12g", cfg.steps, cfg.x0, value)
    return solution


def backward_time(cfg: GameConfig, grids: GameGrids | None = None, workers: int | None = None) -> TimeSolution:
    """Hitting-time DP over the whole grid without the reachability check at x0."""
    _checked(cfg)
    grids = grids or grids_for(cfg)
    workers = config.WORKERS if workers is None else workers
    n, nodes = cfg.steps, grids.state.nodes
    terminal = in_terminal(cfg.terminal, nodes)

    prev = np.where(terminal, 0.0, np.inf)
    policy = np.full((n, len(nodes)), UNREACHABLE, dtype=np.int64)
    converged_at = None
    iterations = 0
    for k in range(1, n + 1):
        i = n - k + 1
        best, best_idx, _ = _backward_step(_time_block, cfg, grids, i, prev, workers)
        best[terminal] = 0.0
        best_idx[terminal] = 0
        policy[i - 1] = best_idx
        iterations = k
        if cfg.time_invariant and np.array_equal(best, prev):
            # fixpoint: earlier steps would repeat the same backup
            policy[: i - 1] = best_idx
            converged_at = k
            break
        prev = best

    counts = np.where(np.isinf(prev), UNREACHABLE, prev).astype(np.int64)
    counts.setflags(write=False)
    policy.setflags(write=False)
    table = TimeValueTable(counts, grids.state, iterations, converged_at, cfg.terminal)
    return TimeSolution(table, OperatorPolicy(policy, grids))


def solve_time(cfg: GameConfig, grids: GameGrids | None = None, workers: int | None = None) -> TimeSolution:
    solution = backward_time(cfg, grids, workers)
    table = solution.table
    steps = table.steps_at(cfg.x0)
    if steps == UNREACHABLE:
        raise NotReachable(
            f"terminal set [{cfg.terminal.lo}, {cfg.terminal.hi}] cannot be guaranteed from "
            f"x0={cfg.x0} within {cfg.steps} steps under every disturbance"
        )
    logger.info("guaranteed hitting time from %g: %d steps (iterations=%d)", cfg.x0, steps, table.iterations)
    return solution


def solve(cfg: GameConfig, grids: GameGrids | None = None, workers: int | None = None):
    if cfg.objective == "time":
        return solve_time(cfg, grids, workers)
    return solve_energy(cfg, grids, workers)


def refine_config(cfg: GameConfig, factor: int) -> GameConfig:
    """Same physics with Δ and Δx divided by factor; per-step ranges repeat over sub-steps."""
    per_step = cfg.per_step
    if len(per_step) > 1:
        per_step = tuple(r for r in per_step for _ in range(factor))
    g = cfg.state_grid
    return cfg.replace(
        steps=cfg.steps * factor,
        state_grid=StateGridSpec(g.x_min, g.x_max, (g.points - 1) * factor + 1),
        per_step=per_step,
    )


def interpolation_bound(cfg: GameConfig, table: ValueTable, grids: GameGrids | None = None) -> InterpolationBound:
    """Run-computed bound C·Δx on the error linear interpolation adds over the horizon.

    Backup k adds at most half a cell times the steepest finite bracket of
    F_{k-1} that an off-node, non-terminal Euler image from a feasible node
    falls into; errors from earlier backups are carried through the Euler
    map's Lipschitz constant in x. Reading F_n off the grid at x0 adds half
    a cell of its own bracket.
    """
    grids = grids or grids_for(cfg)
    n, nodes = cfg.steps, grids.state.nodes
    if cfg.dynamics.kind == "lewis":
        gains = [np.max(np.abs(1.0 - cfg.delta * cfg.dynamics.rate_constant(c))) for c in grids.controls]
        lip_map = float(max(gains))
    else:
        lip_map = 1.0

    live_nodes = ~in_terminal(cfg.terminal, nodes)
    constant = 0.0
    for k in range(1, n + 1):
        live = live_nodes & np.isfinite(table.values[k])
        slope = 0.0
        if live.any():
            images = _images(cfg, grids, nodes[live], n - k + 1).ravel()
            images = images[~in_terminal(cfg.terminal, images)]
            slopes = np.atleast_1d(bracket_slope(table.values[k - 1], grids.state, images))
            slope = float(slopes[np.isfinite(slopes)].max(initial=0.0))
        constant = lip_map * constant + 0.5 * slope
    if not in_terminal(cfg.terminal, cfg.x0):
        read = bracket_slope(table.values[n], grids.state, cfg.x0)
        constant += 0.5 * read if math.isfinite(read) else 0.0
    return InterpolationBound(constant=constant, dx=grids.state.dx)


def refine_and_solve(cfg: GameConfig, levels: int, workers: int | None = None) -> list[RefinementLevel]:
    """Energy values at n, 2n, 4n, ... steps with Δx halved alongside Δ."""
    if levels < 2:
        raise ConfigError([f"refinement needs at least 2 levels, got {levels}"])
    out: list[RefinementLevel] = []
    for level in range(levels):
        fine = refine_config(cfg, 2 ** level)
        grids = grids_for(fine)
        solution = solve_energy(fine, grids, workers)
        value = solution.table.value_at(fine.x0)
        diff = abs(value - out[-1].value) if out else math.nan
        bound = interpolation_bound(fine, solution.table, grids).value
        out.append(RefinementLevel(fine.steps, fine.delta, grids.state.dx, value, diff, bound))
        logger.info("refine level %d: n=%d dx=%g value=%.12g diff=%.3g", level, fine.steps, grids.state.dx, value, diff)
    return out


def is_grid_aligned(cfg: GameConfig, grids: GameGrids | None = None) -> bool:
    """True when every Euler image of every node lands on a state node."""
    grids = grids or grids_for(cfg)
    nodes = grids.state.nodes
    for i in range(1, cfg.steps + 1):
        if np.any(snap_index(grids.state, _images(cfg, grids, nodes, i)) < 0):
            return False
    return True


def worst_stage_policy(cfg: GameConfig, table: ValueTable, grids: GameGrids) -> OperatorPolicy:
    """Policy that plays the control with the largest finite worst-case stage-plus-tail payoff.

    Controls whose worst case is +inf are skipped, so the policy still reaches
    the terminal set from every feasible node; infeasible nodes play index 0.
    """
    n, nodes = cfg.steps, grids.state.nodes
    terminal = in_terminal(cfg.terminal, nodes)
    indices = np.zeros((n, len(nodes)), dtype=np.int64)
    for i in range(1, n + 1):
        worst = _stage_block(cfg, grids, nodes, i, table.slice(n - i)).max(axis=2)
        indices[i - 1] = np.argmax(np.where(np.isfinite(worst), worst, -np.inf), axis=1)
        indices[i - 1, terminal] = 0
    indices.setflags(write=False)
    return OperatorPolicy(indices, grids)
