"""Playing the drying game: rollouts, nature best responses and the ε-saddle check."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from types import MappingProxyType

import numpy as np
from joblib import Parallel, delayed

import config
from app.discretize import GameGrids, clamp, grids_for, nearest_node
from app.errors import InstanceTooLarge, InvalidStrategy, StrategyMismatch
from app.model import GameConfig, eval_energy_rate, euler_step, in_terminal
from app.solver import NatureResponder, OperatorPolicy, ValueTable, stage_payoffs

logger = logging.getLogger(__name__)

NATURE_KINDS = ("constant", "schedule", "responder", "table")
MAX_ENUMERATED_SEQUENCES = 100_000


@dataclass(frozen=True, eq=False)
class NatureStrategy:
    kind: str
    value: float = math.nan
    schedule: tuple[float, ...] = ()
    responder: NatureResponder | None = None
    table: MappingProxyType = field(default_factory=lambda: MappingProxyType({}))

    @classmethod
    def constant(cls, alpha: float) -> NatureStrategy:
        return cls("constant", value=float(alpha))

    @classmethod
    def from_schedule(cls, values) -> NatureStrategy:
        return cls("schedule", schedule=tuple(float(v) for v in values))

    @classmethod
    def from_responder(cls, responder: NatureResponder) -> NatureStrategy:
        return cls("responder", responder=responder)

    @classmethod
    def from_table(cls, entries: dict) -> NatureStrategy:
        """entries maps (step, state node, control index) to a disturbance."""
        return cls("table", table=MappingProxyType(dict(entries)))

    def choose(self, i: int, node: int, control_index: int, grids: GameGrids) -> float:
        disturbances = grids.disturbances[i - 1]
        if self.kind == "constant":
            alpha = self.value
        elif self.kind == "schedule":
            if len(self.schedule) < i:
                raise InvalidStrategy(f"schedule has {len(self.schedule)} entries, step {i} requested")
            alpha = self.schedule[i - 1]
        elif self.kind == "responder":
            alpha = self.responder.disturbance(i, node, control_index)
        elif self.kind == "table":
            alpha = self.table.get((i, node, control_index), float(disturbances[0]))
        else:
            raise InvalidStrategy(f"unknown nature strategy kind {self.kind!r}")
        if not disturbances[0] <= alpha <= disturbances[-1]:
            raise InvalidStrategy(
                f"step {i}: disturbance {alpha} outside [{disturbances[0]}, {disturbances[-1]}]"
            )
        return float(alpha)


@dataclass(frozen=True)
class TrajectoryStep:
    step: int
    tau: float
    x: float
    t: float
    alpha: float
    stage_energy: float
    cum_energy: float
    clamped: bool


@dataclass(frozen=True)
class Trajectory:
    steps: tuple[TrajectoryStep, ...]
    final_state: float
    final_tau: float
    terminal_hit: int | None
    clamp_events: int

    @property
    def states(self) -> tuple[float, ...]:
        return tuple(s.x for s in self.steps) + (self.final_state,)

    @property
    def total_energy(self) -> float:
        return self.steps[-1].cum_energy if self.steps else 0.0

    @property
    def payoff(self) -> float:
        """Energy spent, +inf when the terminal set was never reached."""
        return self.total_energy if self.terminal_hit is not None else math.inf

    @property
    def hitting_steps(self) -> float:
        return self.terminal_hit if self.terminal_hit is not None else math.inf


@dataclass(frozen=True)
class SaddleReport:
    eps: float
    value: float
    left_tested: int
    left_max_violation: float
    right_tested: int
    right_max_violation: float
    nature_families: tuple[str, ...] = ()
    operator_families: tuple[str, ...] = ()
    note: str = (
        "operator deviations are sampled from single-node control swaps and constant-control "
        "strategies; other operator strategies are not tested"
    )

    @property
    def passed(self) -> bool:
        return self.left_max_violation <= self.eps and self.right_max_violation <= self.eps

    @property
    def verdict(self) -> str:
        return "pass" if self.passed else "fail"


def _check_grids(cfg: GameConfig, policy: OperatorPolicy, grids: GameGrids | None) -> GameGrids:
    grids = grids or grids_for(cfg)
    if policy.steps != cfg.steps or not policy.grids.matches(grids):
        raise StrategyMismatch("policy was built on a different partition or grids than the config")
    return grids


def simulate(cfg: GameConfig, policy: OperatorPolicy, nature: NatureStrategy,
             grids: GameGrids | None = None) -> Trajectory:
    """Roll the pair forward from x0 until the terminal set is hit or n steps pass."""
    grids = _check_grids(cfg, policy, grids)
    if nature.kind == "responder" and not nature.responder.grids.matches(grids):
        raise StrategyMismatch("nature responder was built on different grids than the config")

    dyn, delta, times = cfg.dynamics, cfg.delta, grids.partition.times
    x = float(cfg.x0)
    cum = 0.0
    clamps = 0
    steps: list[TrajectoryStep] = []
    hit = 0 if in_terminal(cfg.terminal, x) else None
    i = 0
    while hit is None and i < cfg.steps:
        i += 1
        node = nearest_node(grids.state, x)
        c = policy.control_index(i, node)
        t = float(grids.controls[i - 1][c])
        alpha = nature.choose(i, node, c, grids)
        stage = float(delta * eval_energy_rate(cfg.energy, t, alpha, x))
        raw = float(euler_step(dyn, x, t, alpha, delta))
        nxt = float(clamp(grids.state, raw))
        clamped = nxt != raw
        clamps += clamped
        cum += stage
        steps.append(TrajectoryStep(i, float(times[i - 1]), x, t, alpha, stage, cum, clamped))
        x = nxt
        if in_terminal(cfg.terminal, x):
            hit = i
    return Trajectory(tuple(steps), x, float(times[i]), hit, clamps)


def _sequence_count(grids: GameGrids) -> int:
    return math.prod(len(q) for q in grids.disturbances)


def best_response_nature(cfg: GameConfig, policy: OperatorPolicy, table: ValueTable | None = None,
                         grids: GameGrids | None = None,
                         max_sequences: int = MAX_ENUMERATED_SEQUENCES) -> tuple[NatureStrategy, float]:
    """Nature's best reply to a fixed operator policy.

    With a value table nature looks one step ahead on the table slice given the
    operator's control at the visited state; without one every disturbance
    sequence is enumerated.
    """
    grids = _check_grids(cfg, policy, grids)
    if table is not None:
        strategy = _lookahead_response(cfg, policy, table, grids)
    else:
        count = _sequence_count(grids)
        if count > max_sequences:
            raise InstanceTooLarge(f"{count} disturbance sequences exceed the enumeration limit {max_sequences}")
        strategy = None
        best = -math.inf
        for seq in itertools.product(*grids.disturbances):
            candidate = NatureStrategy.from_schedule(seq)
            payoff = simulate(cfg, policy, candidate, grids).payoff
            if strategy is None or payoff > best:
                strategy, best = candidate, payoff
    payoff = simulate(cfg, policy, strategy, grids).payoff
    logger.debug("nature best response payoff %.12g", payoff)
    return strategy, payoff


def _lookahead_response(cfg: GameConfig, policy: OperatorPolicy, table: ValueTable,
                        grids: GameGrids) -> NatureStrategy:
    entries = {}
    x = float(cfg.x0)
    n = cfg.steps
    for i in range(1, n + 1):
        if in_terminal(cfg.terminal, x):
            break
        node = nearest_node(grids.state, x)
        c = policy.control_index(i, node)
        row = stage_payoffs(x, i, table.slice(n - i), cfg, grids)[c]
        alpha = float(grids.disturbances[i - 1][int(np.argmax(row))])
        entries[(i, node, c)] = alpha
        t = float(grids.controls[i - 1][c])
        x = float(clamp(grids.state, euler_step(cfg.dynamics, x, t, alpha, cfg.delta)))
    return NatureStrategy.from_table(entries)


def operator_deviation_family(cfg: GameConfig, policy: OperatorPolicy) -> list[tuple[str, OperatorPolicy]]:
    """Single-node control swaps, per-step constant rows and global constant controls."""
    grids = policy.grids
    terminal = in_terminal(cfg.terminal, grids.state.nodes)
    base = policy.indices
    out = []
    for i, controls in enumerate(grids.controls, start=1):
        for node in np.flatnonzero(~terminal):
            for c in range(len(controls)):
                if c != policy.control_index(i, node):
                    idx = base.copy()
                    idx[i - 1, node] = c
                    out.append(("swap", policy.with_indices(idx)))
    for i, controls in enumerate(grids.controls, start=1):
        for c in range(len(controls)):
            idx = base.copy()
            idx[i - 1, :] = c
            out.append(("step-constant", policy.with_indices(idx)))
    for c in range(min(len(ctrl) for ctrl in grids.controls)):
        out.append(("constant", policy.with_indices(np.full_like(base, c))))
    return out


def nature_deviation_family(cfg: GameConfig, grids: GameGrids, samples: int, rng: np.random.Generator,
                      max_exhaustive: int = MAX_ENUMERATED_SEQUENCES) -> list[tuple[str, NatureStrategy]]:
    """Constant disturbances, every sequence when few enough, plus random per-step schedules."""
    out = []
    lo = max(float(q[0]) for q in grids.disturbances)
    hi = min(float(q[-1]) for q in grids.disturbances)
    for alpha in grids.disturbances[0]:
        if lo <= alpha <= hi:
            out.append(("constant", NatureStrategy.constant(alpha)))
    if _sequence_count(grids) <= max_exhaustive:
        for seq in itertools.product(*grids.disturbances):
            out.append(("exhaustive", NatureStrategy.from_schedule(seq)))
    for _ in range(samples):
        seq = [q[rng.integers(len(q))] for q in grids.disturbances]
        out.append(("random", NatureStrategy.from_schedule(seq)))
    return out


def _payoff(cfg, policy, nature, grids) -> float:
    return simulate(cfg, policy, nature, grids).payoff


def _payoffs(cfg, grids, pairs, workers: int) -> list[float]:
    if workers <= 1:
        return [_payoff(cfg, p, nat, grids) for p, nat in pairs]
    return Parallel(n_jobs=workers, prefer="threads")(
        delayed(_payoff)(cfg, p, nat, grids) for p, nat in pairs
    )


def _max_gain(gains) -> float:
    gains = np.nan_to_num(np.asarray(gains, dtype=float), nan=np.inf, posinf=np.inf, neginf=-np.inf)
    return float(gains.max(initial=0.0))


def verify_saddle(cfg: GameConfig, policy: OperatorPolicy, responder: NatureResponder, eps: float,
                  operator_deviations: int | None = None, nature_deviations: int = 200,
                  seed: int | None = None, workers: int | None = None) -> SaddleReport:
    """Numerically check that neither player gains more than eps by deviating alone.

    Left side: nature deviations against the policy must not push the payoff
    above V + eps. Right side: operator deviations against the responder, which
    answers every deviating control, must not pull it below V - eps.
    """
    grids = _check_grids(cfg, policy, None)
    if not responder.grids.matches(grids):
        raise StrategyMismatch("responder was built on different grids than the policy")
    workers = config.WORKERS if workers is None else workers
    rng = np.random.default_rng(config.SEED if seed is None else seed)
    base = NatureStrategy.from_responder(responder)
    value = simulate(cfg, policy, base, grids).payoff

    natures = nature_deviation_family(cfg, grids, nature_deviations, rng)
    left = _payoffs(cfg, grids, [(policy, nat) for _, nat in natures], workers)

    family = operator_deviation_family(cfg, policy)
    if operator_deviations is not None and len(family) > operator_deviations:
        keep = np.sort(rng.choice(len(family), size=operator_deviations, replace=False))
        family = [family[j] for j in keep]
    right = _payoffs(cfg, grids, [(dev, base) for _, dev in family], workers)

    with np.errstate(invalid="ignore"):
        report = SaddleReport(
            eps=eps,
            value=value,
            left_tested=len(left),
            left_max_violation=_max_gain(np.subtract(left, value)),
            right_tested=len(right),
            right_max_violation=_max_gain(np.subtract(value, right)),
            nature_families=tuple(sorted({name for name, _ in natures})),
            operator_families=tuple(sorted({name for name, _ in family})),
        )
    logger.info(
        "saddle check V=%.12g: left %d tested (max gain %.3g), right %d tested (max gain %.3g) -> %s",
        value, report.left_tested, report.left_max_violation,
        report.right_tested, report.right_max_violation, report.verdict,
    )
    return report
