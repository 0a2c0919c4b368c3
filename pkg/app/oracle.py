"""Brute-force game-tree evaluation on exact (non-gridded) states.

Deliberately plain: recursion over operator controls then nature disturbances,
no memoization, so the values can be trusted by reading the code.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

from joblib import Parallel, delayed

import config
from app.discretize import GameGrids, grids_for
from app.errors import InstanceTooLarge, InvalidRange
from app.model import GameConfig, eval_energy_rate, euler_step, in_terminal
from app.solver import UNREACHABLE

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class OracleLimits:
    max_nodes: int = field(default_factory=lambda: config.ORACLE_MAX_NODES)

    def __post_init__(self):
        if self.max_nodes < 1:
            raise InvalidRange(f"oracle node budget must be ≥ 1, got {self.max_nodes}")


class OracleResult(NamedTuple):
    value: float
    first_control: float


def tree_size(grids: GameGrids) -> int:
    """Number of (control, disturbance) branches summed over all plies."""
    total, width = 0, 1
    for t, q in zip(grids.controls, grids.disturbances):
        width *= len(t) * len(q)
        total += width
    return total


def _guard(grids: GameGrids, limits: OracleLimits | None) -> None:
    limits = limits or OracleLimits()
    size = tree_size(grids)
    if size > limits.max_nodes:
        raise InstanceTooLarge(f"game tree has {size} nodes, budget is {limits.max_nodes}")


def _next_state(cfg: GameConfig, x: float, t: float, alpha: float) -> float:
    g = cfg.state_grid
    return min(max(float(euler_step(cfg.dynamics, x, t, alpha, cfg.delta)), g.x_min), g.x_max)


def _energy(cfg: GameConfig, grids: GameGrids, x: float, i: int) -> float:
    if in_terminal(cfg.terminal, x):
        return 0.0
    if i > cfg.steps:
        return math.inf
    return min(_energy_row(cfg, grids, x, i, t) for t in grids.controls[i - 1])


def _energy_row(cfg: GameConfig, grids: GameGrids, x: float, i: int, t: float) -> float:
    worst = -math.inf
    for alpha in grids.disturbances[i - 1]:
        stage = float(cfg.delta * eval_energy_rate(cfg.energy, t, alpha, x))
        v = stage + _energy(cfg, grids, _next_state(cfg, x, t, alpha), i + 1)
        if v > worst:
            worst = v
    return worst


def brute_force_value(cfg: GameConfig, limits: OracleLimits | None = None,
                      workers: int | None = None) -> OracleResult:
    grids = grids_for(cfg)
    _guard(grids, limits)
    controls = grids.controls[0]
    x0 = float(cfg.x0)
    if in_terminal(cfg.terminal, x0):
        return OracleResult(0.0, float(controls[0]))

    workers = config.WORKERS if workers is None else workers
    if workers > 1:
        rows = Parallel(n_jobs=workers, prefer="threads")(
            delayed(_energy_row)(cfg, grids, x0, 1, t) for t in controls
        )
    else:
        rows = [_energy_row(cfg, grids, x0, 1, t) for t in controls]
    # strict comparison keeps the lowest temperature among minimizers
    best_c = 0
    for c, v in enumerate(rows):
        if v < rows[best_c]:
            best_c = c
    if math.isinf(rows[best_c]):
        return OracleResult(math.inf, math.nan)
    logger.debug("oracle value %.12g with first control %g", rows[best_c], controls[best_c])
    return OracleResult(rows[best_c], float(controls[best_c]))


def _steps(cfg: GameConfig, grids: GameGrids, x: float, i: int) -> float:
    if in_terminal(cfg.terminal, x):
        return 0.0
    if i > cfg.steps:
        return math.inf
    best = math.inf
    for t in grids.controls[i - 1]:
        worst = max(
            1.0 + _steps(cfg, grids, _next_state(cfg, x, t, alpha), i + 1)
            for alpha in grids.disturbances[i - 1]
        )
        best = min(best, worst)
    return best


def brute_force_time(cfg: GameConfig, limits: OracleLimits | None = None) -> int:
    """Minimum guaranteed hitting step count, UNREACHABLE when no control sequence guarantees it."""
    grids = grids_for(cfg)
    _guard(grids, limits)
    steps = _steps(cfg, grids, float(cfg.x0), 1)
    return UNREACHABLE if math.isinf(steps) else int(steps)
