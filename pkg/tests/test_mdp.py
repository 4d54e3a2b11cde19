import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import bandit, chain2, rand_mdp
from icl_workbench import rng
from icl_workbench.mdp import (
    Mdp,
    MixturePolicy,
    Policy,
    ScalarSignal,
    ShapeError,
    Trajectory,
    backward_value,
    empirical_value,
    load_mdp,
    load_trajectories,
    mdp_from_dict,
    mdp_to_dict,
    mix,
    occupancy,
    policy_from_dict,
    policy_to_dict,
    random_mdp,
    sample_trajectories,
    save_mdp,
    save_trajectories,
    value,
)
from oracles import monte_carlo_occupancy


def random_policy(gen, mdp):
    p = gen.random((mdp.horizon,) + mdp.shape)
    return Policy(p / p.sum(axis=2, keepdims=True))


# -- construction --------------------------------------------------------------------


def test_mdp_rejects_bad_rows():
    P = np.full((2, 1, 2), 0.6)
    with pytest.raises(ValueError):
        Mdp(P, np.array([0.5, 0.5]), 1)


def test_mdp_rejects_bad_initial_dist_and_horizon():
    P = np.full((2, 1, 2), 0.5)
    with pytest.raises(ValueError):
        Mdp(P, np.array([0.7, 0.7]), 1)
    with pytest.raises(ValueError):
        Mdp(P, np.array([0.5, 0.5]), 0)
    with pytest.raises(ShapeError):
        Mdp(P, np.array([1.0]), 1)


def test_signal_range_enforced():
    with pytest.raises(ValueError):
        ScalarSignal(np.array([[1.5]]))
    ScalarSignal(np.array([[-1.0, 1.0]]))


def test_policy_rows_must_sum_to_one():
    with pytest.raises(ValueError):
        Policy(np.array([[[0.5, 0.6]]]))


def test_mixture_weights_validated():
    p = Policy(np.array([[[1.0, 0.0]]]))
    with pytest.raises(ValueError):
        MixturePolicy((p, p), np.array([0.5, 0.6]))


# -- occupancy -----------------------------------------------------------------------


def test_single_state_single_action_occupancy():
    mdp = bandit(num_actions=1, horizon=3)
    rho = occupancy(mdp, Policy.uniform(mdp)).rho
    np.testing.assert_array_equal(rho[:, 0, 0], [1.0, 1.0, 1.0])


def test_deterministic_chain_occupancy():
    mdp = chain2(horizon=2)
    pol = Policy.deterministic(np.zeros((2, 2), dtype=int), 2)
    rho = occupancy(mdp, pol).rho
    assert rho[0, 0, 0] == 1.0
    assert rho[1, 1, 0] == 1.0
    assert rho.sum() == 2.0


def test_occupancy_matches_monte_carlo():
    # [DERIVED] independent rollout estimator with 10^6 samples
    mdp = rand_mdp(7, S=4, A=2, T=4)
    pol = Policy.uniform(mdp)
    n = 1_000_000
    est = monte_carlo_occupancy(mdp, pol, n, np.random.default_rng(99))
    rho = occupancy(mdp, pol).rho
    se = np.sqrt(rho * (1 - rho) / n)
    # 3 standard errors per entry, Bonferroni-widened for 32 simultaneous checks
    assert np.all(np.abs(est - rho) <= 4 * se + 1e-9)


def test_occupancy_shape_mismatch():
    mdp = rand_mdp(1, S=3, A=2, T=2)
    with pytest.raises(ShapeError):
        occupancy(mdp, Policy(np.full((2, 3, 3), 1 / 3)))


@given(seed=st.integers(0, 10_000), S=st.integers(1, 6), A=st.integers(1, 3), T=st.integers(1, 6))
def test_occupancy_normalized_and_flow_consistent(seed, S, A, T):
    gen = rng.stream(seed, "flow")
    mdp = random_mdp(gen, S, A, T, sparsity=0.3)
    rho = occupancy(mdp, random_policy(gen, mdp)).rho
    np.testing.assert_allclose(rho.sum(axis=(1, 2)), 1.0, atol=1e-8)
    for t in range(T - 1):
        inflow = np.einsum("sa,sap->p", rho[t], mdp.transition)
        np.testing.assert_allclose(rho[t + 1].sum(axis=1), inflow, atol=1e-8)
    assert np.all(rho >= 0)


def test_flow_invariants_on_100_random_mdps():
    for seed in range(100):
        gen = rng.stream(seed, "flow-100")
        mdp = random_mdp(gen, int(gen.integers(1, 8)), int(gen.integers(1, 4)), int(gen.integers(1, 7)))
        rho = occupancy(mdp, random_policy(gen, mdp)).rho
        assert np.allclose(rho.sum(axis=(1, 2)), 1.0, atol=1e-8)
        for t in range(mdp.horizon - 1):
            inflow = np.einsum("sa,sap->p", rho[t], mdp.transition)
            assert np.allclose(rho[t + 1].sum(axis=1), inflow, atol=1e-8)


# -- values --------------------------------------------------------------------------


def test_zero_signal_has_zero_value():
    mdp = rand_mdp(2)
    assert value(mdp, Policy.uniform(mdp), ScalarSignal.zeros(mdp)) == 0.0


def test_constant_signal_value():
    mdp = bandit(num_actions=1, horizon=5)
    assert value(mdp, Policy.uniform(mdp), np.ones((1, 1))) == 5.0


def test_mixture_value_is_weighted_average():
    mdp = bandit(num_actions=2, horizon=2)
    f = np.array([[1.0, -0.5]])
    a = Policy.deterministic(np.zeros((2, 1), dtype=int), 2)  # value 2.0
    b = Policy.deterministic(np.ones((2, 1), dtype=int), 2)  # value -1.0
    m = MixturePolicy((a, b), np.array([0.25, 0.75]))
    assert value(mdp, m, f) == pytest.approx(-0.25, abs=1e-12)


@given(seed=st.integers(0, 10_000), S=st.integers(1, 6), A=st.integers(1, 3), T=st.integers(1, 6))
def test_forward_and_backward_values_agree(seed, S, A, T):
    gen = rng.stream(seed, "values")
    mdp = random_mdp(gen, S, A, T)
    pol = random_policy(gen, mdp)
    f = gen.uniform(-1, 1, size=(S, A))
    v = value(mdp, pol, f)
    assert v == pytest.approx(backward_value(mdp, pol, f), abs=1e-8)
    assert abs(v) <= T + 1e-12


@given(seed=st.integers(0, 10_000), k=st.integers(2, 4))
def test_mixture_linearity(seed, k):
    gen = rng.stream(seed, "mixture")
    mdp = random_mdp(gen, 3, 2, 4)
    comps = [random_policy(gen, mdp) for _ in range(k)]
    w = gen.random(k)
    w /= w.sum()
    f = gen.uniform(-1, 1, size=mdp.shape)
    expect = sum(wi * value(mdp, c, f) for wi, c in zip(w, comps))
    assert value(mdp, MixturePolicy(comps, w), f) == pytest.approx(expect, abs=1e-10)


def test_mix_flattens_nested_mixtures():
    mdp = rand_mdp(3)
    a, b = Policy.uniform(mdp), Policy.deterministic(np.zeros((4, 4), dtype=int), 2)
    m = mix(mix(a, b, 0.5), a, 0.2)
    assert len(m.components) == 3
    assert m.weights.sum() == pytest.approx(1.0)


# -- sampling ------------------------------------------------------------------------


def test_deterministic_sampling_gives_identical_trajectories():
    mdp = chain2(horizon=3)
    pol = Policy.deterministic(np.zeros((3, 2), dtype=int), 2)
    trajs = sample_trajectories(mdp, pol, 20, seed=5)
    assert len(trajs) == 20
    assert all(t.steps == trajs[0].steps for t in trajs)
    assert trajs[0].steps == [(0, 0), (1, 0), (1, 0)]


def test_sampling_is_seed_deterministic():
    mdp = rand_mdp(4)
    a = sample_trajectories(mdp, Policy.uniform(mdp), 10, seed=3)
    b = sample_trajectories(mdp, Policy.uniform(mdp), 10, seed=3)
    assert [t.steps for t in a] == [t.steps for t in b]


def test_state_visits_match_occupancy():
    # [DERIVED] occupancy() as oracle, n = 10^5
    mdp = rand_mdp(8, S=4, A=2, T=3)
    pol = Policy.uniform(mdp)
    n = 100_000
    trajs = sample_trajectories(mdp, pol, n, seed=11)
    states = np.stack([t.states for t in trajs])
    visits = occupancy(mdp, pol).state_visits()
    for t in range(mdp.horizon):
        freq = np.bincount(states[:, t], minlength=4) / n
        se = np.sqrt(visits[t] * (1 - visits[t]) / n)
        # Bonferroni-widened bound for 12 simultaneous checks
        assert np.all(np.abs(freq - visits[t]) <= 4 * se + 1e-9)


def test_empirical_value_basics():
    traj = Trajectory(np.zeros(4, dtype=int), np.zeros(4, dtype=int))
    assert empirical_value([traj], np.ones((1, 1))) == 4.0
    assert empirical_value([traj], np.zeros((1, 1))) == 0.0
    with pytest.raises(ValueError):
        empirical_value([], np.zeros((1, 1)))


def test_empirical_value_converges():
    # [DERIVED] exact value() as oracle
    mdp = rand_mdp(9, S=4, A=2, T=4)
    pol = Policy.uniform(mdp)
    f = rng.stream(0, "f").uniform(-1, 1, size=mdp.shape)
    trajs = sample_trajectories(mdp, pol, 100_000, seed=2)
    returns = np.array([f[t.states, t.actions].sum() for t in trajs])
    se = returns.std() / np.sqrt(len(returns))
    assert abs(empirical_value(trajs, f) - value(mdp, pol, f)) <= 3 * se


# -- serialization -------------------------------------------------------------------


def test_mdp_json_round_trip_is_exact(tmp_path):
    mdp = rand_mdp(10, S=5, A=3, T=6)
    save_mdp(mdp, tmp_path / "mdp.json")
    back = load_mdp(tmp_path / "mdp.json")
    np.testing.assert_array_equal(back.transition, mdp.transition)
    np.testing.assert_array_equal(back.initial_dist, mdp.initial_dist)
    assert back.horizon == mdp.horizon
    doc = json.loads((tmp_path / "mdp.json").read_text())
    assert set(doc) == {"num_states", "num_actions", "horizon", "transition", "initial_dist"}


def test_mdp_dict_rejects_inconsistent_sizes():
    doc = mdp_to_dict(rand_mdp(1))
    doc["num_states"] = 9
    with pytest.raises(ShapeError):
        mdp_from_dict(doc)


def test_trajectory_json_is_array_of_pairs(tmp_path):
    mdp = rand_mdp(12)
    trajs = sample_trajectories(mdp, Policy.uniform(mdp), 3, seed=1)
    save_trajectories(trajs, tmp_path / "demos.json")
    doc = json.loads((tmp_path / "demos.json").read_text())
    assert len(doc) == 3 and all(len(pair) == 2 for pair in doc[0])
    assert [t.steps for t in load_trajectories(tmp_path / "demos.json")] == [t.steps for t in trajs]


def test_policy_dict_round_trip():
    mdp = rand_mdp(13)
    m = mix(Policy.uniform(mdp), Policy.deterministic(np.ones((4, 4), dtype=int), 2), 0.3)
    back = policy_from_dict(policy_to_dict(m))
    f = np.ones(mdp.shape) * 0.5
    assert value(mdp, back, f) == pytest.approx(value(mdp, m, f))
