import math

import numpy as np
import pytest

from app.discretize import grids_for
from app.errors import ConfigError, NotReachable
from app.model import EnergyModel, StepRanges, TerminalSet, parse_config
from app.solver import (
    UNREACHABLE,
    backward_energy,
    interpolation_bound,
    is_grid_aligned,
    refine_and_solve,
    refine_config,
    solve,
    solve_energy,
    solve_time,
    stage_minmax,
    stage_payoffs,
    worst_stage_policy,
)
from tests.conftest import variant


def plain_min_dp(cfg, grids):
    """Control-only DP written out node by node, used when nature has a single choice."""
    nodes = grids.state.nodes
    dx = nodes[1] - nodes[0]
    lo, hi = cfg.terminal.lo - 1e-12, cfg.terminal.hi + 1e-12
    terminal = (nodes >= lo) & (nodes <= hi)
    alpha = grids.disturbances[0][0]
    f = np.where(terminal, 0.0, math.inf)

    def tail(y):
        if lo <= y <= hi:
            return 0.0
        j = min(int((y - nodes[0]) // dx), len(nodes) - 2)
        for node in (j, j + 1):
            if abs(y - nodes[node]) <= 1e-9 * dx:
                return f[node]
        if math.isinf(f[j]) or math.isinf(f[j + 1]):
            return math.inf
        return float(np.interp(y, nodes[j:j + 2], f[j:j + 2]))

    for k in range(1, cfg.steps + 1):
        i = cfg.steps - k + 1
        new = np.zeros_like(f)
        for j, x in enumerate(nodes):
            if terminal[j]:
                continue
            best = math.inf
            for t in grids.controls[i - 1]:
                kt = cfg.dynamics.k_ref * math.exp(cfg.dynamics.beta * (t - cfg.dynamics.t_ref))
                y = min(max(x - cfg.delta * kt * (x - alpha), nodes[0]), nodes[-1])
                stage = cfg.delta * (cfg.energy.c0 + cfg.energy.c1 * max(t - cfg.energy.t_amb, 0.0))
                best = min(best, stage + tail(y))
            new[j] = best
        f = new
    return f


def test_stage_minmax_terminal_state(grid_aligned, aligned_grids):
    f_prev = np.zeros(aligned_grids.state.size)
    result = stage_minmax(0.05, 1, f_prev, grid_aligned, aligned_grids)
    assert (result.value, result.control, result.disturbance) == (0.0, 1.0, 0.0)


def test_stage_minmax_pure_sum(constant_rate):
    cfg = constant_rate.replace(
        objective="energy",
        per_step=(StepRanges((21.0, 21.0), (0.0, 0.0)),),
        control_points=1,
    )
    grids = grids_for(cfg)
    f_prev = np.full(grids.state.size, 7.0)
    f_prev[2] = 2.0
    result = stage_minmax(0.6, 1, f_prev, cfg, grids)
    assert result.value == pytest.approx(3.0)
    assert result.control == 21.0


def test_stage_minmax_cheapest_sufficient_control(constant_rate):
    cfg = constant_rate.replace(objective="energy", control_points=2)
    grids = grids_for(cfg)
    f_prev = np.where(grids.state.nodes <= 0.2 + 1e-12, 0.0, math.inf)
    result = stage_minmax(0.4, 1, f_prev, cfg, grids)
    assert result.value == pytest.approx(20.0)
    assert result.control == 40.0
    assert result.disturbance == grids.disturbances[0][0]


def test_stage_minmax_infeasible(constant_rate):
    cfg = constant_rate.replace(objective="energy")
    grids = grids_for(cfg)
    f_prev = np.where(grids.state.nodes <= 0.2 + 1e-12, 0.0, math.inf)
    result = stage_minmax(0.8, 1, f_prev, cfg, grids)
    assert math.isinf(result.value)
    assert result.control_index == UNREACHABLE


def test_stage_payoffs_shape(grid_aligned, aligned_grids):
    table = stage_payoffs(0.5, 1, np.zeros(aligned_grids.state.size), grid_aligned, aligned_grids)
    assert table.shape == (3, 3)
    np.testing.assert_allclose(table[:, 0], [1.5, 2.5, 3.5])


def test_grid_aligned_value(grid_aligned):
    table, policy, responder = solve_energy(grid_aligned)
    assert table.value_at(grid_aligned.x0) == pytest.approx(7.0, abs=1e-12)
    node = grid_aligned.state_grid.points - 1
    assert policy.control(1, node) == 3.0
    assert responder.disturbance(1, node, policy.control_index(1, node)) == 0.5


def test_value_table_invariants(lewis_benchmark):
    table, _, _ = solve_energy(lewis_benchmark)
    nodes = table.grid.nodes
    terminal = nodes <= lewis_benchmark.terminal.hi + 1e-12
    assert np.all(table.values[:, terminal] == 0.0)
    assert np.all(table.values[0, ~terminal] == math.inf)
    assert np.all(table.values >= 0.0)


def test_feasibility_is_monotone_in_steps(lewis_benchmark):
    table, _, _ = solve_energy(lewis_benchmark)
    for k in range(table.steps):
        feasible = np.isfinite(table.values[k])
        assert np.all(np.isfinite(table.values[k + 1][feasible]))


def test_value_monotone_in_humidity(lewis_benchmark):
    table, _, _ = solve_energy(lewis_benchmark)
    last = table.slice(table.steps)
    assert all(a <= b + 1e-9 for a, b in zip(last[:-1], last[1:]))


def test_terminal_start_costs_nothing(grid_aligned):
    table, policy, _ = solve_energy(grid_aligned.replace(x0=0.1))
    assert table.value_at(0.1) == 0.0
    assert policy.control(1, 2) == 1.0


def test_off_node_terminal_start_costs_nothing(frozen):
    # 0.25 lies between node 0.2 (terminal) and node 0.3 (never reachable)
    cfg = frozen.replace(terminal=TerminalSet(0.0, 0.25), x0=0.25)
    table, _, _ = solve_energy(cfg)
    assert table.value_at(0.25) == 0.0
    assert table.value_at(0.25, k=0) == 0.0
    assert math.isinf(table.value_at(0.26))


def test_off_node_terminal_start_on_benchmark(lewis_benchmark):
    cfg = lewis_benchmark.replace(terminal=TerminalSet(0.0, 0.16), x0=0.16)
    table, _, _ = solve_energy(cfg)
    assert table.value_at(0.16) == 0.0
    assert table.value_at(0.17) > 0.0


def test_literal_benchmark_not_reachable(lewis_literal):
    with pytest.raises(NotReachable):
        solve_energy(lewis_literal)


def test_frozen_not_reachable(frozen):
    with pytest.raises(NotReachable):
        solve_energy(frozen)
    with pytest.raises(NotReachable):
        solve_time(frozen.replace(objective="time"))


def test_invalid_config_raises(grid_aligned):
    with pytest.raises(ConfigError) as err:
        backward_energy(grid_aligned.replace(terminal=TerminalSet(0.5, 0.4)))
    assert any("lo ≤ hi required" in p for p in err.value.problems)


def test_singleton_nature_reduces_to_plain_min(singleton_nature):
    grids = grids_for(singleton_nature)
    table, _, _ = solve_energy(singleton_nature, grids)
    expected = plain_min_dp(singleton_nature, grids)
    got = table.slice(table.steps)
    assert np.array_equal(np.isinf(got), np.isinf(expected))
    finite = np.isfinite(expected)
    np.testing.assert_allclose(got[finite], expected[finite], rtol=1e-12, atol=1e-9)


@pytest.mark.parametrize("scale", [0.5, 3.0])
def test_energy_scaling(grid_aligned, scale):
    en = grid_aligned.energy
    scaled = grid_aligned.replace(energy=EnergyModel(en.c0 * scale, en.c1 * scale, en.t_amb))
    base, base_policy, _ = solve_energy(grid_aligned)
    other, other_policy, _ = solve_energy(scaled)
    finite = np.isfinite(base.values)
    assert np.array_equal(finite, np.isfinite(other.values))
    np.testing.assert_allclose(other.values[finite], scale * base.values[finite], rtol=1e-9)
    assert np.array_equal(base_policy.indices, other_policy.indices)


def test_solver_is_deterministic(lewis_benchmark):
    a = solve_energy(lewis_benchmark)
    b = solve_energy(lewis_benchmark)
    assert np.array_equal(a.table.values, b.table.values)
    assert a.policy.same_as(b.policy)


def test_parallel_matches_serial(lewis_benchmark):
    serial = solve_energy(lewis_benchmark, workers=1)
    parallel = solve_energy(lewis_benchmark, workers=3)
    assert np.array_equal(serial.table.values, parallel.table.values)
    assert np.array_equal(serial.policy.indices, parallel.policy.indices)
    for s, p in zip(serial.responder.indices, parallel.responder.indices):
        assert np.array_equal(s, p)


def test_constant_rate_hitting_time(constant_rate):
    table, policy = solve_time(constant_rate)
    assert table.steps_at(constant_rate.x0) == 4
    assert table.counts.tolist() == [0, 0, 1, 2, 3, 4]
    assert table.converged_at is not None
    assert policy.control(1, 5) == 40.0


def test_hitting_time_from_terminal(constant_rate):
    table, _ = solve_time(constant_rate.replace(x0=0.2))
    assert table.steps_at(0.2) == 0


def test_hitting_time_from_off_node_terminal(constant_rate):
    table, _ = solve_time(constant_rate.replace(terminal=TerminalSet(0.0, 0.25), x0=0.25))
    assert table.steps_at(0.25) == 0
    assert table.steps_at(0.3) >= 1


def test_time_parallel_matches_serial(constant_rate):
    serial = solve_time(constant_rate, workers=1)
    parallel = solve_time(constant_rate, workers=2)
    assert np.array_equal(serial.table.counts, parallel.table.counts)


def test_solve_dispatches_on_objective(grid_aligned, constant_rate):
    assert len(solve(grid_aligned)) == 3
    assert len(solve(constant_rate)) == 2


def test_refine_config_halves_steps(lewis_benchmark):
    fine = refine_config(lewis_benchmark, 2)
    assert fine.steps == 20
    assert fine.delta == pytest.approx(lewis_benchmark.delta / 2)
    assert fine.state_grid.points == 81


def test_refine_config_repeats_per_step_ranges(grid_aligned):
    ranges = (
        StepRanges((1.0, 3.0), (0.0, 1.0)),
        StepRanges((1.0, 2.0), (0.0, 1.0)),
        StepRanges((2.0, 3.0), (0.0, 0.5)),
    )
    fine = refine_config(grid_aligned.replace(per_step=ranges), 2)
    assert fine.per_step == (ranges[0], ranges[0], ranges[1], ranges[1], ranges[2], ranges[2])


def test_refinement_study_shape(lewis_benchmark):
    levels = refine_and_solve(lewis_benchmark, 3)
    assert [lv.n for lv in levels] == [10, 20, 40]
    assert levels[1].dx == pytest.approx(levels[0].dx / 2)
    assert math.isnan(levels[0].diff_from_prev)
    assert all(math.isfinite(lv.value) for lv in levels)
    assert all(math.isfinite(lv.diff_from_prev) for lv in levels[1:])


def test_refinement_needs_two_levels(lewis_benchmark):
    with pytest.raises(ConfigError):
        refine_and_solve(lewis_benchmark, 1)


def test_grid_alignment(grid_aligned, lewis_benchmark):
    assert is_grid_aligned(grid_aligned)
    assert not is_grid_aligned(lewis_benchmark)


def test_interpolation_bound(lewis_benchmark):
    table, _, _ = solve_energy(lewis_benchmark)
    bound = interpolation_bound(lewis_benchmark, table)
    assert bound.dx == pytest.approx(0.025)
    assert 0.0 < bound.value < math.inf


def test_interpolation_bound_vanishes_on_grid_aligned_instance(grid_aligned):
    table, _, _ = solve_energy(grid_aligned)
    assert interpolation_bound(grid_aligned, table).value == 0.0


def test_worst_stage_policy_differs_from_optimal(grid_aligned, aligned_grids):
    table, policy, _ = solve_energy(grid_aligned, aligned_grids)
    worst = worst_stage_policy(grid_aligned, table, aligned_grids)
    assert worst.control(1, 10) == 1.0
    assert not worst.same_as(policy)


def test_per_step_ranges_are_respected():
    data = variant("grid_aligned")
    data["per_step"] = [
        {"control": [1.0, 3.0], "disturbance": [0.0, 1.0]},
        {"control": [1.0, 3.0], "disturbance": [0.0, 1.0]},
        {"control": [3.0, 3.0], "disturbance": [0.0, 1.0]},
    ]
    cfg = parse_config(data)
    _, policy, _ = solve_energy(cfg)
    assert np.all(policy.temperatures()[2][np.isfinite(policy.temperatures()[2])] == 3.0)
