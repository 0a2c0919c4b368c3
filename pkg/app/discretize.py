"""State, control and disturbance grids, the time partition, and value interpolation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from app.errors import InvalidRange, OutOfDomain
from app.model import GameConfig

# Queries this close to a node (relative to the spacing) read the node value exactly.
SNAP_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class StateGrid:
    nodes: np.ndarray

    @property
    def x_min(self) -> float:
        return float(self.nodes[0])

    @property
    def x_max(self) -> float:
        return float(self.nodes[-1])

    @property
    def dx(self) -> float:
        return float(self.nodes[1] - self.nodes[0])

    @property
    def size(self) -> int:
        return len(self.nodes)

    def __eq__(self, other) -> bool:
        return isinstance(other, StateGrid) and np.array_equal(self.nodes, other.nodes)

    def __hash__(self):
        return hash(self.nodes.tobytes())


@dataclass(frozen=True, eq=False)
class Partition:
    times: np.ndarray

    @property
    def steps(self) -> int:
        return len(self.times) - 1

    @property
    def delta(self) -> float:
        return float(self.times[-1] / self.steps)

    def __eq__(self, other) -> bool:
        return isinstance(other, Partition) and np.array_equal(self.times, other.times)

    def __hash__(self):
        return hash(self.times.tobytes())


@dataclass(frozen=True, eq=False)
class GameGrids:
    """Everything discretized for one GameConfig; controls[i - 1] belongs to step i."""

    state: StateGrid
    controls: tuple[np.ndarray, ...]
    disturbances: tuple[np.ndarray, ...]
    partition: Partition

    def matches(self, other: GameGrids) -> bool:
        return (
            self.state == other.state
            and self.partition == other.partition
            and len(self.controls) == len(other.controls)
            and all(np.array_equal(a, b) for a, b in zip(self.controls, other.controls))
            and all(np.array_equal(a, b) for a, b in zip(self.disturbances, other.disturbances))
        )


def build_state_grid(x_min: float, x_max: float, points: int) -> StateGrid:
    if not x_min < x_max:
        raise InvalidRange(f"state grid needs x_min < x_max, got [{x_min}, {x_max}]")
    if points < 2:
        raise InvalidRange(f"state grid needs at least 2 points, got {points}")
    nodes = np.linspace(x_min, x_max, points)
    nodes.setflags(write=False)
    return StateGrid(nodes)


def discretize_range(lo: float, hi: float, points: int) -> np.ndarray:
    """Uniform inclusive sampling of [lo, hi]; a degenerate interval is the singleton {lo}."""
    if lo > hi:
        raise InvalidRange(f"range needs lo ≤ hi, got [{lo}, {hi}]")
    if lo == hi:
        if points < 1:
            raise InvalidRange("a degenerate range needs at least 1 point")
        values = np.array([lo], dtype=float)
    else:
        if points < 2:
            raise InvalidRange(f"range [{lo}, {hi}] needs at least 2 points, got {points}")
        values = np.linspace(lo, hi, points)
    values.setflags(write=False)
    return values


def uniform_partition(horizon: float, n: int) -> Partition:
    if not horizon > 0:
        raise InvalidRange(f"horizon must be > 0, got {horizon}")
    if n < 1:
        raise InvalidRange(f"partition needs at least 1 step, got {n}")
    times = np.arange(n + 1) * (horizon / n)
    times[-1] = horizon
    times.setflags(write=False)
    return Partition(times)


def grids_for(cfg: GameConfig) -> GameGrids:
    g = cfg.state_grid
    controls, disturbances = [], []
    for i in range(1, cfg.steps + 1):
        r = cfg.ranges(i)
        controls.append(discretize_range(r.control[0], r.control[1], cfg.control_points))
        disturbances.append(discretize_range(r.disturbance[0], r.disturbance[1], cfg.disturbance_points))
    return GameGrids(
        state=build_state_grid(g.x_min, g.x_max, g.points),
        controls=tuple(controls),
        disturbances=tuple(disturbances),
        partition=uniform_partition(cfg.horizon, cfg.steps),
    )


def clamp(grid: StateGrid, x):
    return np.clip(x, grid.nodes[0], grid.nodes[-1])


def _bracket(grid: StateGrid, x: np.ndarray):
    nodes = grid.nodes
    if np.any(~(x >= nodes[0])) or np.any(~(x <= nodes[-1])):
        raise OutOfDomain(f"query outside grid [{nodes[0]}, {nodes[-1]}]")
    lo = np.clip(np.searchsorted(nodes, x, side="right") - 1, 0, len(nodes) - 2)
    return lo, lo + 1


def snap_index(grid: StateGrid, x):
    """Index of the node x coincides with (up to SNAP_RTOL·Δx), else -1."""
    x = np.asarray(x, dtype=float)
    lo, hi = _bracket(grid, x)
    tol = SNAP_RTOL * grid.dx
    out = np.where(np.abs(x - grid.nodes[lo]) <= tol, lo, -1)
    out = np.where(np.abs(grid.nodes[hi] - x) <= tol, hi, out)
    return out


def interp_value(values, grid: StateGrid, x):
    """Piecewise-linear interpolation of per-node values.

    Exact at nodes. A bracketing node carrying +inf makes the result +inf.
    The result is clipped into the bracket's value range so monotone tables
    give monotone interpolants despite rounding.
    """
    values = np.asarray(values, dtype=float)
    xq = np.asarray(x, dtype=float)
    lo, hi = _bracket(grid, xq)
    xl, xh = grid.nodes[lo], grid.nodes[hi]
    vl, vh = values[lo], values[hi]
    with np.errstate(invalid="ignore"):
        w = (xq - xl) / (xh - xl)
        out = vl + w * (vh - vl)
        out = np.clip(out, np.minimum(vl, vh), np.maximum(vl, vh))
    out = np.where(np.isinf(vl) | np.isinf(vh), np.inf, out)
    tol = SNAP_RTOL * grid.dx
    out = np.where(np.abs(xq - xl) <= tol, vl, out)
    out = np.where(np.abs(xh - xq) <= tol, vh, out)
    return float(out) if out.ndim == 0 else out


def upper_value(values, grid: StateGrid, x):
    """Larger of the two bracketing node values, or the node value when x sits on a node."""
    values = np.asarray(values, dtype=float)
    xq = np.asarray(x, dtype=float)
    lo, hi = _bracket(grid, xq)
    out = np.maximum(values[lo], values[hi])
    tol = SNAP_RTOL * grid.dx
    out = np.where(np.abs(xq - grid.nodes[lo]) <= tol, values[lo], out)
    out = np.where(np.abs(grid.nodes[hi] - xq) <= tol, values[hi], out)
    return float(out) if out.ndim == 0 else out


def bracket_slope(values, grid: StateGrid, x):
    """|Δvalue| / Δx of the bracket each query falls into; nan on nodes and on +inf brackets."""
    values = np.asarray(values, dtype=float)
    xq = np.asarray(x, dtype=float)
    lo, hi = _bracket(grid, xq)
    vl, vh = values[lo], values[hi]
    with np.errstate(invalid="ignore"):
        out = np.abs(vh - vl) / grid.dx
    out = np.where(np.isinf(vl) | np.isinf(vh) | (snap_index(grid, xq) >= 0), np.nan, out)
    return float(out) if out.ndim == 0 else out


def nearest_node(grid: StateGrid, x):
    """Nearest node index; an exact midpoint resolves to the lower node."""
    xq = np.asarray(clamp(grid, x), dtype=float)
    lo, hi = _bracket(grid, xq)
    pick = np.where(grid.nodes[hi] - xq < xq - grid.nodes[lo], hi, lo)
    return int(pick) if pick.ndim == 0 else pick
