"""One-shot regression baseline: fit a constraint separating above-expert
trajectories from the demonstrations.

Candidates come from entropy-regularized policies at a ladder of
temperatures; any sampled trajectory with return above the expert's
empirical return counts. A single least-squares fit labels candidates +1
and demonstrations -1.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from .. import rng as _rng
from ..constraints import LinearConstraint, regression_update, trajectory_features
from ..mdp import empirical_value, sample_batch, Trajectory, trajectory_returns
from ..solvers import soft_rl

TEMPERATURE_LADDER = (0.02, 0.05, 0.1, 0.2, 0.5, 1.0)


class NoCandidatesWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class BaselineResult:
    constraint: LinearConstraint
    num_candidates: int
    num_sampled: int


def collect_candidates(mdp, r, expert_trajs, budget, seed, ladder=TEMPERATURE_LADDER):
    """Sampled trajectories (from the ladder, budget split evenly) beating the expert's mean return."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    bar = empirical_value(expert_trajs, r)
    per_rung = [budget // len(ladder) + (1 if i < budget % len(ladder) else 0) for i in range(len(ladder))]
    kept, sampled = [], 0
    for i, (temp, n) in enumerate(zip(ladder, per_rung)):
        if n == 0:
            continue
        pol = soft_rl(mdp, r, temp)
        states, actions = sample_batch(mdp, pol, n, _rng.stream(seed, "baseline", i))
        trajs = [Trajectory(states[j], actions[j]) for j in range(n)]
        sampled += n
        rets = trajectory_returns(trajs, r)
        kept += [t for t, ret in zip(trajs, rets) if ret > bar + 1e-12]
    return kept, sampled


def baseline_chou_result(mdp, r, expert_trajs, fmap, cset, budget=600, seed=0, ladder=TEMPERATURE_LADDER):
    cands, sampled = collect_candidates(mdp, r, expert_trajs, budget, seed, ladder)
    if not cands:
        warnings.warn("no sampled trajectory beat the expert's return; returning the zero constraint",
                      NoCandidatesWarning)
        return BaselineResult(LinearConstraint(fmap, np.zeros(fmap.dim), cset.radius), 0, sampled)
    w = regression_update(trajectory_features(cands, fmap), trajectory_features(expert_trajs, fmap), cset)
    return BaselineResult(LinearConstraint(fmap, w, cset.radius), len(cands), sampled)


def baseline_chou(mdp, r, expert_trajs, fmap, cset, budget=600, seed=0):
    return baseline_chou_result(mdp, r, expert_trajs, fmap, cset, budget, seed).constraint
