"""CSV and JSON artifacts: value tables, policies, trajectories, studies and run manifests.

Every float is written with 17 significant digits, `.` decimals and LF line
endings, so reruns are byte-identical and values round-trip exactly.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path

import numpy as np

from app import VERSION_TAG
from app.discretize import GameGrids
from app.errors import StrategyMismatch
from app.game import Trajectory
from app.solver import (
    UNREACHABLE,
    NatureResponder,
    OperatorPolicy,
    RefinementLevel,
    TimeValueTable,
    ValueTable,
)

VALUE_COLUMNS = ("k", "x", "value")
POLICY_COLUMNS = ("i", "x", "t")
RESPONDER_COLUMNS = ("i", "x", "t", "alpha")
TRAJECTORY_COLUMNS = ("step", "tau", "x", "t", "alpha", "stage_energy", "cum_energy", "clamped")
REFINE_COLUMNS = ("n", "delta_t", "dx", "value", "diff_from_prev")
SWEEP_COLUMNS = ("x0", "value", "first_control")


def fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return format(float(v), ".17g")


def write_csv(path: Path, header, rows) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow(["" if isinstance(v, str) else fmt(v) for v in row])
    return path


def read_csv(path: Path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_value_table(path: Path, table: ValueTable) -> Path:
    nodes = table.grid.nodes
    rows = ((k, nodes[j], table.values[k, j]) for k in range(table.steps + 1) for j in range(len(nodes)))
    return write_csv(path, VALUE_COLUMNS, rows)


def write_time_table(path: Path, table: TimeValueTable) -> Path:
    counts = np.where(table.counts == UNREACHABLE, math.inf, table.counts.astype(float))
    rows = ((table.iterations, x, v) for x, v in zip(table.grid.nodes, counts))
    return write_csv(path, VALUE_COLUMNS, rows)


def write_policy(path: Path, policy: OperatorPolicy) -> Path:
    temps = policy.temperatures()
    nodes = policy.grids.state.nodes
    rows = ((i + 1, nodes[j], temps[i, j]) for i in range(policy.steps) for j in range(len(nodes)))
    return write_csv(path, POLICY_COLUMNS, rows)


def write_responder(path: Path, responder: NatureResponder) -> Path:
    grids = responder.grids
    nodes = grids.state.nodes
    rows = (
        (i + 1, nodes[j], grids.controls[i][c], grids.disturbances[i][responder.indices[i][j, c]])
        for i in range(len(responder.indices))
        for j in range(len(nodes))
        for c in range(len(grids.controls[i]))
    )
    return write_csv(path, RESPONDER_COLUMNS, rows)


def write_trajectory(path: Path, traj: Trajectory) -> Path:
    rows = [
        (s.step, s.tau, s.x, s.t, s.alpha, s.stage_energy, s.cum_energy, s.clamped)
        for s in traj.steps
    ]
    rows.append((len(traj.steps), traj.final_tau, traj.final_state, "", "", 0.0, traj.total_energy, False))
    return write_csv(path, TRAJECTORY_COLUMNS, rows)


def write_refine(path: Path, levels: list[RefinementLevel]) -> Path:
    rows = ((lv.n, lv.delta_t, lv.dx, lv.value, lv.diff_from_prev) for lv in levels)
    return write_csv(path, REFINE_COLUMNS, rows)


def write_sweep(path: Path, rows) -> Path:
    return write_csv(path, SWEEP_COLUMNS, rows)


def _node_index(grids: GameGrids, x: float) -> int:
    hits = np.flatnonzero(grids.state.nodes == x)
    if not hits.size:
        raise StrategyMismatch(f"artifact state {x!r} is not a node of the config's state grid")
    return int(hits[0])


def _grid_index(values: np.ndarray, v: float, what: str) -> int:
    hits = np.flatnonzero(values == v)
    if not hits.size:
        raise StrategyMismatch(f"artifact {what} {v!r} is not on the config's grid")
    return int(hits[0])


def read_policy(path: Path, grids: GameGrids) -> OperatorPolicy:
    rows = read_csv(path)
    n, size = len(grids.controls), grids.state.size
    if len(rows) != n * size:
        raise StrategyMismatch(f"policy file has {len(rows)} rows, config needs {n * size}")
    indices = np.full((n, size), UNREACHABLE, dtype=np.int64)
    for row in rows:
        i = int(row["i"])
        if not 1 <= i <= n:
            raise StrategyMismatch(f"policy step {i} outside 1..{n}")
        t = float(row["t"])
        if not math.isnan(t):
            indices[i - 1, _node_index(grids, float(row["x"]))] = _grid_index(grids.controls[i - 1], t, "control")
    indices.setflags(write=False)
    return OperatorPolicy(indices, grids)


def read_responder(path: Path, grids: GameGrids) -> NatureResponder:
    rows = read_csv(path)
    indices = [np.zeros((grids.state.size, len(c)), dtype=np.int64) for c in grids.controls]
    expected = sum(a.size for a in indices)
    if len(rows) != expected:
        raise StrategyMismatch(f"responder file has {len(rows)} rows, config needs {expected}")
    for row in rows:
        i = int(row["i"])
        if not 1 <= i <= len(indices):
            raise StrategyMismatch(f"responder step {i} outside 1..{len(indices)}")
        j = _node_index(grids, float(row["x"]))
        c = _grid_index(grids.controls[i - 1], float(row["t"]), "control")
        indices[i - 1][j, c] = _grid_index(grids.disturbances[i - 1], float(row["alpha"]), "disturbance")
    for a in indices:
        a.setflags(write=False)
    return NatureResponder(tuple(indices), grids)


def build_manifest(command: str, config_path: str | Path, artifacts: list[Path], duration_s: float) -> dict:
    return {
        "command": command,
        "config_path": str(config_path),
        "config_digest": file_digest(config_path),
        "artifacts": sorted(Path(p).name for p in artifacts),
        "version": VERSION_TAG,
        "duration_s": round(duration_s, 6),
    }


def write_manifest(out_dir: Path, manifest: dict) -> Path:
    path = Path(out_dir) / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def read_manifest(out_dir: Path) -> dict:
    path = Path(out_dir) / "manifest.json"
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise StrategyMismatch(f"cannot read manifest {path}: {e}") from e
