import math

import numpy as np
import pytest

from icl_workbench.envs import (
    FIXTURES,
    GridSpec,
    MAZE10,
    format_maze,
    get_fixture,
    make_expert,
    make_maze_env,
    make_position_env,
    make_task_distribution,
    make_velocity_env,
    maze10_envs,
    parse_maze,
    realizability_gap,
)
from icl_workbench.identify import verify_saturation
from icl_workbench.mdp import Policy, Trajectory, empirical_value, occupancy, value
from icl_workbench.solvers import CrlParams, crl, optimal_value, rl_best_response

# -- grid specs ----------------------------------------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [
        {"width": 0, "height": 2},
        {"width": 2, "height": 2, "start_cells": ((2, 0),)},
        {"width": 2, "height": 2, "wall_cells": {(0, 0)}},
        {"width": 2, "height": 2, "goal_cell": (1, 1), "wall_cells": {(1, 1)}},
        {"width": 2, "height": 2, "slip_prob": 0.5},
        {"width": 2, "height": 2, "moves": 6},
    ],
)
def test_grid_spec_validation(kwargs):
    with pytest.raises(ValueError):
        GridSpec(**kwargs)


def test_maze_text_round_trips():
    spec = parse_maze(MAZE10)
    assert parse_maze(format_maze(spec)) == spec
    assert GridSpec.from_dict(spec.to_dict()) == spec
    assert spec.start_cells == ((0, 0), (0, 9))
    with pytest.raises(ValueError):
        parse_maze("S.\n.x")


# -- maze ----------------------------------------------------------------------------


def test_empty_maze_constraint_is_vacuous():
    env = make_maze_env(GridSpec(4, 3, goal_cell=(3, 2)))
    assert np.all(env.ground_truth.c_star.values <= 0)
    res = crl(env.mdp, env.reward, env.ground_truth.c_star, 0.0, CrlParams(num_iters=20))
    assert res.achieved_value == pytest.approx(optimal_value(env.mdp, env.reward))


def test_goal_cell_has_maximum_reward():
    env = make_maze_env(parse_maze(MAZE10.replace("S.........\n.#", "S........G\n.#", 1)))
    spec = env.spec
    goal = spec.index(*spec.goal_cell)
    assert env.reward.values[goal, 0] == pytest.approx(1.0)
    assert env.reward.values[goal, 0] == env.reward.values.max()


def test_three_wall_steps_cost_three():
    spec = parse_maze("S#G\n.#.\n...")
    env = make_maze_env(spec, horizon=4)
    c = env.ground_truth.c_star.values
    walls = [spec.index(1, 0), spec.index(1, 1), spec.index(1, 0)]
    traj = Trajectory(np.array([spec.index(0, 0)] + walls), np.zeros(4, dtype=int))
    wall_part = sum(c[s, 0] for s in traj.states if env.info["wall_mask"][s])
    assert wall_part == 3.0
    assert empirical_value([traj], c) == pytest.approx(3.0 - env.ground_truth.margin)


def test_maze_class_keeps_staying_put_safe():
    env = maze10_envs()[0]
    for x, y in env.spec.start_cells:
        e = np.eye(env.feature_map.dim)[env.spec.index(x, y)]
        assert any(np.allclose(a, e) and b == 0.0 for a, b in env.constraint_set.halfspaces)
    assert env.constraint_set.contains(env.ground_truth.weights)


# -- position ------------------------------------------------------------------------


def test_boundary_cells_are_safe():
    env = make_position_env(size=8, slope=0.5)
    xs, ys = env.spec.coords()
    on_line = 0.5 * xs - ys == 0
    assert on_line.any()
    assert np.all(env.ground_truth.c_star.values[on_line] <= 0)
    above = 0.5 * xs - ys > 0
    assert np.all(env.ground_truth.c_star.values[above] > 0)


def test_zero_slope_is_vacuous():
    env = make_position_env(slope=0.0)
    assert np.all(env.ground_truth.c_star.values <= 0)


def test_position_features_read_out_boundary():
    env = make_position_env()
    w = env.ground_truth.weights
    np.testing.assert_allclose(w[:2] / -w[1], [0.5, -1.0])


# -- velocity ------------------------------------------------------------------------


def test_slow_speeds_only_is_vacuous():
    env = make_velocity_env(speeds=(0.25, 0.5, 0.75))
    assert np.all(env.ground_truth.c_star.values <= 1e-12)
    res = crl(env.mdp, env.reward, env.ground_truth.c_star, 0.0, CrlParams(num_iters=20))
    assert res.achieved_value == pytest.approx(optimal_value(env.mdp, env.reward))


def test_unsafe_set_at_threshold():
    env = make_velocity_env(speeds=(0.5, 1.0), vmax=0.75)
    c = env.ground_truth.c_star.values[0]
    assert c[1] > 0 >= c[0]


def test_two_speed_expert_caps_average_speed():
    # [DERIVED] with c linear in speed and budget 0, the constrained optimum keeps the mean speed at 0.75
    # and fills it with the fast action wherever grip favours it
    env = make_velocity_env(speeds=(0.5, 1.0), vmax=0.75, grips=(1.4,))
    T = env.mdp.horizon
    fast = rl_best_response(env.mdp, env.reward)
    assert np.all(fast.greedy_actions() == 1)
    expert, _ = make_expert(env.mdp, env.reward, env.ground_truth, CrlParams(), 0.0, 5)
    speed = np.array([[0.5, 1.0]] * env.mdp.num_states)
    assert value(env.mdp, expert, speed) / T == pytest.approx(0.75, abs=0.05)
    gap = verify_saturation(env.mdp, [env.reward], [value(env.mdp, expert, env.reward)])[0]
    assert gap["saturated"]


# -- experts -------------------------------------------------------------------------


def test_clean_demos_match_expert_value():
    # [DERIVED] exact value() as the oracle
    env = make_velocity_env()
    pol, demos = make_expert(env.mdp, env.reward, env.ground_truth, CrlParams(), 0.0, 4000, seed=3)
    r = env.reward.values
    returns = np.array([r[t.states, t.actions].sum() for t in demos])
    se = returns.std() / math.sqrt(len(returns)) + 1e-12
    assert abs(returns.mean() - value(env.mdp, pol, r)) <= 3 * se


def test_full_noise_is_uniform():
    env = make_velocity_env()
    pol, _ = make_expert(env.mdp, env.reward, env.ground_truth, CrlParams(), 1.0, 3)
    assert isinstance(pol, Policy)
    np.testing.assert_allclose(pol.action_probs, 1.0 / env.mdp.num_actions)
    with pytest.raises(ValueError):
        make_expert(env.mdp, env.reward, env.ground_truth, CrlParams(), 1.5, 3)
    with pytest.raises(ValueError):
        make_expert(env.mdp, env.reward, env.ground_truth, CrlParams(), 0.0, 0)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_demos_are_safe(name):
    fx = get_fixture(name)
    env = fx.envs()[0]
    T = env.mdp.horizon
    pol, demos = make_expert(env.mdp, env.reward, env.ground_truth, fx.crl_params, 0.0, 200, seed=0)
    c = env.ground_truth.c_star.values
    returns = np.array([c[t.states, t.actions].sum() for t in demos])
    slack = 3 * returns.std() / math.sqrt(len(returns)) + 0.01 * T
    assert returns.mean() <= slack


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_fixture_experts_saturate(name):
    fx = get_fixture(name)
    for env in fx.envs()[:3]:
        pol, _ = make_expert(env.mdp, env.reward, env.ground_truth, fx.crl_params, 0.0, 1)
        rep = verify_saturation(env.mdp, [env.reward], [value(env.mdp, pol, env.reward)])[0]
        assert rep["saturated"], (env.name, rep)


@pytest.mark.parametrize("name", sorted(FIXTURES))
def test_ground_truth_realizable(name):
    for env in get_fixture(name).envs():
        assert realizability_gap(env.ground_truth, env.feature_map) <= 1e-9
        assert env.constraint_set.contains(env.ground_truth.weights)


def test_construction_is_deterministic():
    a, b = maze10_envs()[3], maze10_envs()[3]
    np.testing.assert_array_equal(a.mdp.transition, b.mdp.transition)
    np.testing.assert_array_equal(a.reward.values, b.reward.values)


# -- task families -------------------------------------------------------------------


def test_same_seed_same_tasks():
    a = make_task_distribution("position-slopes", {"n_demos": 3}, seed=5).draw(3)
    b = make_task_distribution("position-slopes", {"n_demos": 3}, seed=5).draw(3)
    assert [t.task_id for t in a] == [t.task_id for t in b]
    assert [[d.steps for d in t.demos] for t in a] == [[d.steps for d in t.demos] for t in b]
    c = make_task_distribution("position-slopes", {"n_demos": 3}, seed=6).draw(3)
    assert [t.task_id for t in a] != [t.task_id for t in c]


def test_unknown_family():
    with pytest.raises(ValueError):
        make_task_distribution("ant-velocity")


def test_maze10_goals_fill_right_column():
    envs = maze10_envs()
    goals = {e.spec.goal_cell for e in envs}
    assert len(goals) == 10
    assert all(x == envs[0].spec.width - 1 for x, _ in goals)
    assert {e.spec.start_cells for e in envs} == {((0, 0), (0, 9))}


def test_sampled_maze_experts_are_safe_on_average():
    # [DERIVED] exact expert values averaged over 50 sampled tasks
    tasks = make_task_distribution("maze-goals", {"n_demos": 1}, seed=0).draw(50)
    vals = [value(t.env.mdp, t.expert_policy, t.env.ground_truth.c_star) for t in tasks]
    assert np.mean(vals) <= 0.0
    goals = {t.env.spec.goal_cell for t in tasks}
    assert not goals & set(tasks[0].env.spec.wall_cells)


def test_expert_occupancy_avoids_walls():
    env = maze10_envs()[0]
    pol, _ = make_expert(env.mdp, env.reward, env.ground_truth, CrlParams(), 0.0, 1)
    wall_mass = occupancy(env.mdp, pol).aggregate().reshape(env.mdp.shape)[env.info["wall_mask"]].sum()
    assert wall_mass <= 0.1 * env.mdp.horizon
