"""Command-line front end.

    drygame.py solve --config <path> --out <dir>
    drygame.py simulate --config <path> --policy <path> --nature <spec> --out <dir>
    drygame.py refine --config <path> --levels <k> --out <dir>
    drygame.py oracle-check --config <path> [--tolerance <float>]
    drygame.py sweep --config <path> --x0 <comma list> --out <dir>
    drygame.py saddle --config <path> --out <dir> [--eps <float>] [--seed <int>]
    drygame.py runs [--limit N]

Nature spec grammar: `responder` | `constant:<float>` | `schedule:<comma list>`.
The config JSON schema is documented on `app.model.parse_config`; every CSV is
written by `app.artifacts`.

Exit codes: 0 ok, 1 config or usage error, 2 terminal set not reachable,
3 artifact mismatch, 4 tolerance exceeded, 5 instance too large.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
import time
from pathlib import Path

from sqlalchemy.exc import SQLAlchemyError

import config
from app import artifacts
from app.discretize import grids_for, nearest_node
from app.errors import (
    ConfigError,
    InstanceTooLarge,
    InvalidRange,
    InvalidStrategy,
    NotReachable,
    OutOfDomain,
    StrategyMismatch,
)
from app.game import NatureStrategy, simulate, verify_saddle
from app.model import GameConfig, in_terminal, load_config, validate_config
from app.models import record_run, recent_runs
from app.oracle import brute_force_time, brute_force_value
from app.solver import (
    UNREACHABLE,
    backward_energy,
    backward_time,
    interpolation_bound,
    is_grid_aligned,
    refine_and_solve,
    solve_energy,
    solve_time,
)

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NOT_REACHABLE = 2
EXIT_MISMATCH = 3
EXIT_TOLERANCE = 4
EXIT_TOO_LARGE = 5

ALIGNED_TOLERANCE = 1e-12
ALIGNED_EPS = 1e-9


class _Parser(argparse.ArgumentParser):
    # usage errors exit 1; 2 is NotReachable
    def error(self, message):
        raise ConfigError([message])


def _load(path: str) -> GameConfig:
    cfg = load_config(path)
    report = validate_config(cfg)
    if not report.ok:
        raise ConfigError(report.violations)
    return cfg


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _finish(command: str, config_path: str, written: list[Path], started: float,
            out: Path | None = None, exit_code: int = EXIT_OK) -> int:
    manifest = artifacts.build_manifest(command, config_path, written, time.perf_counter() - started)
    if out is not None:
        artifacts.write_manifest(out, manifest)
    if config.RECORD_RUNS:
        try:
            run_id = record_run(manifest, exit_code)
            logger.debug("run recorded (id=%d)", run_id)
        except SQLAlchemyError as e:
            logger.warning("could not record run: %s", e)
    return exit_code


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else f"{v:.12g}"


def cmd_solve(args) -> int:
    started = time.perf_counter()
    cfg = _load(args.config)
    out = _out_dir(args.out)
    grids = grids_for(cfg)
    print(f"Solving {cfg.objective} game: n={cfg.steps}, {grids.state.size} state nodes")
    if cfg.objective == "time":
        table, policy = solve_time(cfg, grids)
        written = [
            artifacts.write_time_table(out / "value.csv", table),
            artifacts.write_policy(out / "policy.csv", policy),
        ]
        print(f"  Guaranteed hitting time from x0={cfg.x0:g}: {table.steps_at(cfg.x0)} steps")
    else:
        table, policy, responder = solve_energy(cfg, grids)
        written = [
            artifacts.write_value_table(out / "value.csv", table),
            artifacts.write_policy(out / "policy.csv", policy),
            artifacts.write_responder(out / "responder.csv", responder),
        ]
        print(f"  Guaranteed energy F_{cfg.steps}({cfg.x0:g}) = {_fmt(table.value_at(cfg.x0))}")
    print(f"  Artifacts written to {out}")
    return _finish("solve", args.config, written, started, out)


def parse_nature(spec: str, cfg: GameConfig, policy_dir: Path, grids) -> NatureStrategy:
    kind, _, rest = spec.partition(":")
    try:
        if kind == "responder" and not rest:
            path = policy_dir / "responder.csv"
            if not path.exists():
                raise ConfigError([f"nature 'responder' needs {path} (energy objective only)"])
            return NatureStrategy.from_responder(artifacts.read_responder(path, grids))
        if kind == "constant" and rest:
            return NatureStrategy.constant(float(rest))
        if kind == "schedule" and rest:
            values = [float(v) for v in rest.split(",")]
            if len(values) != cfg.steps:
                raise ConfigError([f"schedule needs {cfg.steps} disturbances, got {len(values)}"])
            return NatureStrategy.from_schedule(values)
    except ValueError as e:
        raise ConfigError([f"bad nature spec {spec!r}: {e}"]) from e
    raise ConfigError([f"bad nature spec {spec!r}: expected responder | constant:<float> | schedule:<list>"])


def cmd_simulate(args) -> int:
    started = time.perf_counter()
    cfg = _load(args.config)
    grids = grids_for(cfg)
    policy_path = Path(args.policy)
    manifest = artifacts.read_manifest(policy_path.parent)
    if manifest.get("config_digest") != artifacts.file_digest(args.config):
        raise StrategyMismatch(f"{policy_path} was solved from a different config than {args.config}")
    policy = artifacts.read_policy(policy_path, grids)
    nature = parse_nature(args.nature, cfg, policy_path.parent, grids)

    traj = simulate(cfg, policy, nature, grids)
    out = _out_dir(args.out)
    written = [artifacts.write_trajectory(out / "trajectory.csv", traj)]
    hit = "none" if traj.terminal_hit is None else str(traj.terminal_hit)
    print(f"Simulated {len(traj.steps)} steps against nature '{args.nature}'")
    if cfg.objective == "time":
        print(f"  hitting steps = {_fmt(traj.hitting_steps)}, clamps = {traj.clamp_events}")
    else:
        print(f"  total E = {_fmt(traj.total_energy)}, terminal hit step = {hit}, clamps = {traj.clamp_events}")
    return _finish("simulate", args.config, written, started, out)


def cmd_refine(args) -> int:
    started = time.perf_counter()
    if args.levels < 2:
        raise ConfigError([f"refinement needs at least 2 levels, got {args.levels}"])
    cfg = _load(args.config)
    levels = refine_and_solve(cfg, args.levels)
    out = _out_dir(args.out)
    written = [artifacts.write_refine(out / "refine.csv", levels)]
    print(f"Refinement study over {len(levels)} levels")
    for lv in levels:
        print(f"  n={lv.n:<5d} dx={lv.dx:<10.4g} value={_fmt(lv.value)}  bound={lv.bound:.3g}")
    return _finish("refine", args.config, written, started, out)


def cmd_oracle_check(args) -> int:
    started = time.perf_counter()
    cfg = _load(args.config)
    grids = grids_for(cfg)
    aligned = is_grid_aligned(cfg, grids)

    if cfg.objective == "time":
        oracle_steps = brute_force_time(cfg)
        counts = backward_time(cfg, grids).table.steps_at(cfg.x0)
        dp = math.inf if counts == UNREACHABLE else float(counts)
        oracle = math.inf if oracle_steps == UNREACHABLE else float(oracle_steps)
        tolerance = 0.0 if args.tolerance is None else args.tolerance
        controls_agree = True
    else:
        oracle_result = brute_force_value(cfg)
        table, policy, _ = backward_energy(cfg, grids)
        dp = table.value_at(cfg.x0)
        oracle = oracle_result.value
        if args.tolerance is not None:
            tolerance = args.tolerance
        elif aligned:
            tolerance = ALIGNED_TOLERANCE
        else:
            tolerance = interpolation_bound(cfg, table, grids).value
        controls_agree = True
        if aligned and args.tolerance is None and math.isfinite(dp):
            dp_control = policy.control(1, nearest_node(grids.state, cfg.x0))
            controls_agree = in_terminal(cfg.terminal, cfg.x0) or dp_control == oracle_result.first_control

    gap = 0.0 if dp == oracle else abs(dp - oracle)
    print(f"Oracle check ({'grid-aligned' if aligned else 'interpolated'} instance)")
    print(f"  solver = {_fmt(dp)}")
    print(f"  oracle = {_fmt(oracle)}")
    print(f"  |gap|  = {_fmt(gap)} (tolerance {tolerance:.3g})")
    ok = gap <= tolerance and controls_agree
    if not controls_agree:
        print("  first controls differ")
    print(f"  {'PASS' if ok else 'FAIL'}")
    return _finish("oracle-check", args.config, [], started, exit_code=EXIT_OK if ok else EXIT_TOLERANCE)


def _parse_x0_list(raw: str) -> list[float]:
    try:
        values = [float(v) for v in raw.split(",") if v.strip()]
    except ValueError as e:
        raise ConfigError([f"bad x0 list {raw!r}: {e}"]) from e
    if not values:
        raise ConfigError(["x0 list is empty"])
    return values


def cmd_sweep(args) -> int:
    started = time.perf_counter()
    xs = _parse_x0_list(args.x0)
    cfg = _load(args.config)
    grids = grids_for(cfg)
    outside = [x for x in xs if not grids.state.x_min <= x <= grids.state.x_max]
    if outside:
        raise ConfigError([f"x0 {x} outside the state grid [{grids.state.x_min}, {grids.state.x_max}]" for x in outside])

    if cfg.objective == "time":
        table, policy = backward_time(cfg, grids)

        def value_at(x: float) -> float:
            steps = table.steps_at(x)
            return math.inf if steps == UNREACHABLE else float(steps)
    else:
        table, policy, _ = backward_energy(cfg, grids)
        value_at = table.value_at

    rows = []
    for x in xs:
        if in_terminal(cfg.terminal, x):
            rows.append((x, 0.0, float(grids.controls[0][0])))
            continue
        value = value_at(x)
        first = math.nan if math.isinf(value) else policy.control(1, nearest_node(grids.state, x))
        rows.append((x, value, first))
    out = _out_dir(args.out)
    written = [artifacts.write_sweep(out / "sweep.csv", rows)]
    print(f"Swept {len(rows)} initial humidities")
    for x, v, t in rows:
        print(f"  x0={x:<8g} value={_fmt(v)}  first t={t:g}")
    return _finish("sweep", args.config, written, started, out)


def cmd_saddle(args) -> int:
    started = time.perf_counter()
    cfg = _load(args.config)
    if cfg.objective != "energy":
        raise ConfigError(["saddle check needs the energy objective"])
    grids = grids_for(cfg)
    table, policy, responder = solve_energy(cfg, grids)
    if args.eps is not None:
        eps = args.eps
    elif is_grid_aligned(cfg, grids):
        eps = ALIGNED_EPS
    else:
        eps = interpolation_bound(cfg, table, grids).value

    report = verify_saddle(
        cfg, policy, responder, eps,
        operator_deviations=args.operator_deviations,
        nature_deviations=args.nature_deviations,
        seed=args.seed,
    )
    out = _out_dir(args.out)
    path = out / "saddle.json"
    body = dataclasses.asdict(report) | {"passed": report.passed}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    print(f"Saddle check at eps={eps:.3g}: {report.verdict}")
    print(f"  left:  {report.left_tested} nature deviations, max gain {report.left_max_violation:.3g}")
    print(f"  right: {report.right_tested} operator deviations, max gain {report.right_max_violation:.3g}")
    code = EXIT_OK if report.passed else EXIT_TOLERANCE
    return _finish("saddle", args.config, [path], started, out, exit_code=code)


def cmd_runs(args) -> int:
    runs = recent_runs(args.limit)
    if not runs:
        print("No runs recorded.")
        return EXIT_OK
    for run in runs:
        created = run.created_at.strftime("%Y-%m-%d %H:%M:%S") if run.created_at else "-"
        print(f"  #{run.id:<4d} {created}  {run.command:<13s} exit={run.exit_code}  "
              f"{run.duration_s:8.3f}s  {run.config_digest[:12]}  {run.config_path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="drygame", description="Guaranteed-optimal drying schedules")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="solve the game and write value, policy and responder tables")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_solve)

    p = sub.add_parser("simulate", help="roll a solved policy forward against a nature strategy")
    p.add_argument("--config", required=True)
    p.add_argument("--policy", required=True)
    p.add_argument("--nature", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_simulate)

    p = sub.add_parser("refine", help="time-partition and state-grid refinement study")
    p.add_argument("--config", required=True)
    p.add_argument("--levels", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_refine)

    p = sub.add_parser("oracle-check", help="compare the solver against brute-force tree search")
    p.add_argument("--config", required=True)
    p.add_argument("--tolerance", type=float, default=None)
    p.set_defaults(handler=cmd_oracle_check)

    p = sub.add_parser("sweep", help="value and first control over a list of initial humidities")
    p.add_argument("--config", required=True)
    p.add_argument("--x0", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_sweep)

    p = sub.add_parser("saddle", help="numerical epsilon-saddle check of the solved strategies")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--operator-deviations", type=int, default=None)
    p.add_argument("--nature-deviations", type=int, default=200)
    p.set_defaults(handler=cmd_saddle)

    p = sub.add_parser("runs", help="list recently recorded runs")
    p.add_argument("--limit", type=int, default=20)
    p.set_defaults(handler=cmd_runs)
    return parser


def _configure_logging() -> None:
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL.upper(), logging.INFO),
        format="  [%(module)s] %(message)s",
    )


def _report(code: int, message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return code


def _record_failure(args, code: int, started: float) -> None:
    path = getattr(args, "config", None)
    if path is None or not Path(path).is_file():
        return
    _finish(args.command, path, [], started, exit_code=code)


def main(argv: list[str] | None = None) -> int:
    _configure_logging()
    started = time.perf_counter()
    args = None
    try:
        args = build_parser().parse_args(argv)
        return args.handler(args)
    except ConfigError as e:
        for problem in e.problems:
            print(f"config error: {problem}", file=sys.stderr)
        code = EXIT_CONFIG
    except (InvalidRange, InvalidStrategy, OutOfDomain) as e:
        code = _report(EXIT_CONFIG, str(e))
    except NotReachable as e:
        code = _report(EXIT_NOT_REACHABLE, str(e))
    except StrategyMismatch as e:
        code = _report(EXIT_MISMATCH, str(e))
    except InstanceTooLarge as e:
        code = _report(EXIT_TOO_LARGE, str(e))
    _record_failure(args, code, started)
    return code
