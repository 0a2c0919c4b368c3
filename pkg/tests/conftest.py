import copy
import json
import os
import sys
from pathlib import Path

# registry in memory and serial solver unless a test asks otherwise
os.environ["DATABASE_URL"] = "sqlite://"
os.environ["DRYGAME_RECORD_RUNS"] = "1"
os.environ["DRYGAME_WORKERS"] = "1"

ROOT = Path(__file__).resolve().parent.parent
sys.path.insert(0, str(ROOT))

import pytest  # noqa: E402

from app.discretize import grids_for  # noqa: E402
from app.model import load_config, parse_config  # noqa: E402

CONFIGS = ROOT / "configs"


def config_dict(name: str) -> dict:
    return json.loads((CONFIGS / f"{name}.json").read_text(encoding="utf-8"))


def variant(name: str, **changes) -> dict:
    """A sample config with top-level keys (or dotted section keys) overridden."""
    data = copy.deepcopy(config_dict(name))
    for key, value in changes.items():
        if "__" in key:
            section, field = key.split("__", 1)
            data[section][field] = value
        else:
            data[key] = value
    return data


def write_config(tmp_path: Path, data: dict, name: str = "cfg.json") -> str:
    path = tmp_path / name
    path.write_text(json.dumps(data, indent=2), encoding="utf-8")
    return str(path)


def small_lewis_dict() -> dict:
    """Two-step lewis instance off the grid, small enough for the oracle; needs both steps from x0."""
    return variant(
        "lewis_benchmark",
        horizon=4.0, steps=2, x0=0.3,
        state_grid={"x_min": 0.0, "x_max": 1.0, "points": 11},
        control_points=3, disturbance_points=3,
        per_step=[{"control": [40.0, 60.0], "disturbance": [0.05, 0.10]}],
    )


@pytest.fixture
def grid_aligned():
    return load_config(CONFIGS / "grid_aligned.json")


@pytest.fixture
def lewis_benchmark():
    return load_config(CONFIGS / "lewis_benchmark.json")


@pytest.fixture
def lewis_literal():
    return load_config(CONFIGS / "lewis_literal.json")


@pytest.fixture
def constant_rate():
    return load_config(CONFIGS / "constant_rate_time.json")


@pytest.fixture
def frozen():
    return load_config(CONFIGS / "frozen.json")


@pytest.fixture
def alpha_independent():
    return parse_config(variant("grid_aligned", dynamics={"kind": "affine", "a": -0.1, "b": 0.0, "c": 0.0}))


@pytest.fixture
def singleton_nature():
    data = small_lewis_dict()
    data["per_step"] = [{"control": [40.0, 80.0], "disturbance": [0.1, 0.1]}]
    data["disturbance_points"] = 1
    return parse_config(data)


@pytest.fixture
def small_lewis():
    return parse_config(small_lewis_dict())


@pytest.fixture
def aligned_grids(grid_aligned):
    return grids_for(grid_aligned)
