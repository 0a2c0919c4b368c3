import itertools
import math

import numpy as np
import pytest

from app.discretize import clamp
from app.errors import InstanceTooLarge, InvalidStrategy, StrategyMismatch
from app.game import (
    NatureStrategy,
    best_response_nature,
    nature_deviation_family,
    operator_deviation_family,
    simulate,
    verify_saddle,
)
from app.model import euler_step
from app.solver import interpolation_bound, solve_energy, worst_stage_policy


@pytest.fixture
def aligned_solution(grid_aligned, aligned_grids):
    return solve_energy(grid_aligned, aligned_grids)


def test_responder_attains_value(grid_aligned, aligned_solution):
    table, policy, responder = aligned_solution
    traj = simulate(grid_aligned, policy, NatureStrategy.from_responder(responder))
    assert traj.payoff == pytest.approx(7.0, abs=1e-9)
    assert traj.terminal_hit == 2
    assert [s.t for s in traj.steps] == [3.0, 3.0]
    assert traj.steps[-1].clamped
    assert traj.clamp_events == 1


def test_policy_is_secure_against_every_sequence(grid_aligned, aligned_grids, aligned_solution):
    table, policy, _ = aligned_solution
    value = table.value_at(grid_aligned.x0)
    payoffs = [
        simulate(grid_aligned, policy, NatureStrategy.from_schedule(seq), aligned_grids).payoff
        for seq in itertools.product(*aligned_grids.disturbances)
    ]
    assert len(payoffs) == 27
    assert max(payoffs) <= value + 1e-9


def test_trajectory_from_terminal_is_empty(grid_aligned, aligned_solution):
    _, policy, _ = aligned_solution
    traj = simulate(grid_aligned.replace(x0=0.05), policy, NatureStrategy.constant(0.0))
    assert traj.steps == ()
    assert traj.total_energy == 0.0
    assert traj.terminal_hit == 0
    assert traj.final_tau == 0.0


def test_unique_rollout(constant_rate):
    from app.model import StepRanges

    cfg = constant_rate.replace(
        objective="energy",
        per_step=(StepRanges((50.0, 50.0), (0.0, 0.0)),),
        control_points=1,
    )
    _, policy, responder = solve_energy(cfg)
    traj = simulate(cfg, policy, NatureStrategy.from_responder(responder))
    np.testing.assert_allclose(traj.states, [1.0, 0.8, 0.6, 0.4, 0.2], atol=1e-12)
    assert traj.total_energy == pytest.approx(4 * 30.0)
    assert [s.cum_energy for s in traj.steps] == pytest.approx([30.0, 60.0, 90.0, 120.0])
    assert [s.tau for s in traj.steps] == pytest.approx([0.0, 1.0, 2.0, 3.0])


def test_schedule_too_short(grid_aligned, aligned_solution):
    _, policy, _ = aligned_solution
    with pytest.raises(InvalidStrategy):
        simulate(grid_aligned, policy, NatureStrategy.from_schedule([1.0]))


def test_disturbance_out_of_range(grid_aligned, aligned_solution):
    _, policy, _ = aligned_solution
    with pytest.raises(InvalidStrategy):
        simulate(grid_aligned, policy, NatureStrategy.constant(2.0))


def test_policy_from_other_grid_rejected(grid_aligned, lewis_benchmark):
    _, policy, _ = solve_energy(lewis_benchmark)
    with pytest.raises(StrategyMismatch):
        simulate(grid_aligned, policy, NatureStrategy.constant(0.0))


def test_best_response_matches_value(grid_aligned, aligned_solution):
    table, policy, _ = aligned_solution
    _, payoff = best_response_nature(grid_aligned, policy)
    assert payoff == pytest.approx(table.value_at(grid_aligned.x0), abs=1e-9)
    _, lookahead = best_response_nature(grid_aligned, policy, table=table)
    assert lookahead == pytest.approx(payoff, abs=1e-9)


def test_best_response_alpha_independent(alpha_independent):
    _, policy, _ = solve_energy(alpha_independent)
    strategy, payoff = best_response_nature(alpha_independent, policy)
    assert strategy.schedule[0] == 0.0
    for alpha in (0.0, 0.5, 1.0):
        assert simulate(alpha_independent, policy, NatureStrategy.constant(alpha)).payoff == payoff


def test_best_response_singleton_nature(singleton_nature):
    _, policy, responder = solve_energy(singleton_nature)
    strategy, payoff = best_response_nature(singleton_nature, policy)
    assert set(strategy.schedule) == {0.1}
    assert payoff == simulate(singleton_nature, policy, NatureStrategy.from_responder(responder)).payoff


def test_best_response_enumeration_guard(grid_aligned, aligned_solution):
    _, policy, _ = aligned_solution
    with pytest.raises(InstanceTooLarge):
        best_response_nature(grid_aligned, policy, max_sequences=10)


def test_deviation_families(grid_aligned, aligned_grids, aligned_solution):
    _, policy, _ = aligned_solution
    operators = operator_deviation_family(grid_aligned, policy)
    kinds = {name for name, _ in operators}
    assert kinds == {"swap", "step-constant", "constant"}
    assert all(not dev.same_as(policy) or name != "swap" for name, dev in operators)
    natures = nature_deviation_family(grid_aligned, aligned_grids, 5, np.random.default_rng(0))
    assert sum(name == "exhaustive" for name, _ in natures) == 27
    assert sum(name == "random" for name, _ in natures) == 5


def test_saddle_holds_on_grid_aligned_instance(grid_aligned, aligned_solution):
    _, policy, responder = aligned_solution
    report = verify_saddle(grid_aligned, policy, responder, eps=1e-9, seed=0)
    assert report.passed
    assert report.value == pytest.approx(7.0, abs=1e-9)
    assert report.left_tested > 27
    assert report.right_tested > 0


def test_mutated_policy_is_exploitable(grid_aligned, aligned_grids, aligned_solution):
    table, _, responder = aligned_solution
    mutant = worst_stage_policy(grid_aligned, table, aligned_grids)
    _, payoff = best_response_nature(grid_aligned, mutant)
    assert payoff > table.value_at(grid_aligned.x0) + 1e-9

    # t=1, then t=3 twice against the responder: 1.5 + 3.5 + 3.5
    report = verify_saddle(grid_aligned, mutant, responder, eps=1e-9, seed=0)
    assert report.value == pytest.approx(8.5, abs=1e-9)
    assert math.isfinite(report.right_max_violation)
    assert report.right_max_violation > report.eps
    assert report.right_max_violation >= 1.5 - 1e-9
    assert not report.passed


def test_best_response_dominates_sampled_natures(grid_aligned, aligned_grids, aligned_solution):
    table, policy, _ = aligned_solution
    rng = np.random.default_rng(7)
    for candidate in (policy, worst_stage_policy(grid_aligned, table, aligned_grids)):
        _, best = best_response_nature(grid_aligned, candidate)
        for _, nature in nature_deviation_family(grid_aligned, aligned_grids, 20, rng):
            assert best >= simulate(grid_aligned, candidate, nature, aligned_grids).payoff - 1e-9


def test_replaying_a_trajectory_reproduces_its_states(lewis_benchmark):
    _, policy, responder = solve_energy(lewis_benchmark)
    traj = simulate(lewis_benchmark, policy, NatureStrategy.from_responder(responder))
    grid = policy.grids.state
    x = lewis_benchmark.x0
    for step in traj.steps:
        assert step.x == x
        x = float(clamp(grid, float(euler_step(lewis_benchmark.dynamics, x, step.t, step.alpha, lewis_benchmark.delta))))
    assert x == traj.final_state
    assert traj.states[-1] == traj.final_state


def test_alpha_independent_left_side_is_tight(alpha_independent):
    _, policy, responder = solve_energy(alpha_independent)
    report = verify_saddle(alpha_independent, policy, responder, eps=1e-9, seed=0)
    assert report.left_max_violation == 0.0
    assert report.passed


def test_saddle_parallel_matches_serial(grid_aligned, aligned_solution):
    _, policy, responder = aligned_solution
    serial = verify_saddle(grid_aligned, policy, responder, eps=1e-9, seed=3, workers=1)
    parallel = verify_saddle(grid_aligned, policy, responder, eps=1e-9, seed=3, workers=2)
    assert serial == parallel


def test_saddle_report_on_interpolated_instance(lewis_benchmark):
    table, policy, responder = solve_energy(lewis_benchmark)
    eps = 10 * interpolation_bound(lewis_benchmark, table).value
    report = verify_saddle(lewis_benchmark, policy, responder, eps=eps, operator_deviations=200,
                           nature_deviations=50, seed=1)
    assert report.right_tested == 200
    assert report.left_tested >= 50
    assert math.isfinite(report.value)
    assert report.passed == (report.left_max_violation <= eps and report.right_max_violation <= eps)
    assert "not tested" in report.note
