"""Multi-task inverse constraint learning, sample-size bounds and the
expert-safety assumption check.

Every task shares the dynamics and the unknown constraint but has its own
reward. The constraint class is first cut down to constraints under which
each task's expert is safe (value <= 0); each round then solves one CRL
problem per task with budget 0 and feeds FTRL the task-averaged feature gap.
"""

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import rng as _rng
from .constraints import (
    InfeasibleRestriction,
    LinearConstraint,
    build_restricted_set,
    default_alpha,
    expected_features,
    ftrl_update,
    saturate_level,
    linear_argmax,
    trajectory_features,
)
from .icl import IclTrace, grad_bound, normalized_problem, regret_curve, selection_index, standard_error
from .mdp import as_table
from .solvers import CrlParams, crl, optimal_value


class AssumptionWarning(UserWarning):
    pass


@dataclass(frozen=True, eq=False)
class TaskBundle:
    mdp: object
    rewards: list
    expert_trajs: list  # one list of Trajectory per task
    task_ids: tuple = ()
    expert_policies: list = None
    validation_trajs: list = None  # optional held-out demos per task

    def __post_init__(self):
        K = len(self.rewards)
        if K < 1:
            raise ValueError("a bundle needs at least one task")
        if len(self.expert_trajs) != K:
            raise ValueError("one demo list per task is required")
        ids = tuple(self.task_ids) or tuple(f"task{k:03d}" for k in range(K))
        if len(ids) != K or len(set(ids)) != K:
            raise ValueError("task_ids must be unique, one per task")
        for r in self.rewards:
            if as_table(r).shape != self.mdp.shape:
                raise ValueError("every reward must match the MDP's state-action shape")
        for demos in self.expert_trajs:
            if not demos:
                raise ValueError("every task needs at least one demonstration")
        object.__setattr__(self, "task_ids", ids)

    @property
    def num_tasks(self):
        return len(self.rewards)

    def order(self):
        """Task indices sorted by id: the fold order for every aggregate."""
        return sorted(range(self.num_tasks), key=lambda k: self.task_ids[k])

    def subset(self, indices):
        idx = list(indices)
        pick = lambda xs: None if xs is None else [xs[k] for k in idx]  # noqa: E731
        return TaskBundle(
            self.mdp,
            pick(self.rewards),
            pick(self.expert_trajs),
            tuple(self.task_ids[k] for k in idx),
            pick(self.expert_policies),
            pick(self.validation_trajs),
        )

    @classmethod
    def from_tasks(cls, tasks, holdout_demos=0):
        """Bundle envs.Task objects; the last ``holdout_demos`` demos of each task go to validation."""
        mdp = tasks[0].env.mdp
        train, val = [], []
        for t in tasks:
            cut = len(t.demos) - holdout_demos
            if cut < 1:
                raise ValueError("holdout leaves no training demos")
            train.append(list(t.demos[:cut]))
            val.append(list(t.demos[cut:]))
        return cls(
            mdp,
            [t.env.reward for t in tasks],
            train,
            tuple(t.task_id for t in tasks),
            [t.expert_policy for t in tasks],
            val if holdout_demos else None,
        )


def expert_feature_vectors(bundle, fmap, validation=False):
    source = bundle.validation_trajs if validation else bundle.expert_trajs
    return [trajectory_features(demos, fmap).mean(axis=0) for demos in source]


def _fold_mean(vectors, order):
    total = np.zeros_like(vectors[order[0]])
    for k in order:
        total = total + vectors[k]
    return total / len(order)


def _solve_tasks(bundle, c, crl_params):
    c_norm, _ = normalized_problem(c, 0.0)
    return [crl(bundle.mdp, as_table(r), c_norm, 0.0, crl_params) for r in bundle.rewards]


def mticl(bundle, fmap, base_set, num_rounds, crl_params=CrlParams(), seed=0, alpha=None, validation=None,
          saturate=True):
    """Run the multi-task game and select a constraint.

    Losses ignore constant shifts of c, so when the feature map can express
    constants the played constraint is the FTRL iterate shifted up until the
    least safe expert sits at 0 (``saturate``); the shift leaves every loss and
    the regret unchanged. ``validation`` is a TaskBundle of held-out tasks;
    without one, the bundle's own held-out demos are used when present, else
    its training demos.
    """
    if num_rounds < 1:
        raise ValueError("num_rounds must be >= 1")
    T = bundle.mdp.horizon
    order = bundle.order()
    phi_e = expert_feature_vectors(bundle, fmap)
    report = check_assumption(bundle, fmap, base_set, spot_checks=0)
    if not report["restricted_set_nonempty"]:
        raise InfeasibleRestriction("no constraint in the class keeps every expert safe")
    cset = build_restricted_set(base_set, phi_e)
    alpha = alpha or default_alpha(grad_bound(fmap), num_rounds, cset.radius)
    w = cset.project(np.zeros(fmap.dim))
    constraints, results, grads, task_losses = [], [], [], []
    for _ in range(num_rounds):
        played = saturate_level(w, fmap, phi_e, T) if saturate else w
        c = LinearConstraint(fmap, played, cset.radius)
        res = _solve_tasks(bundle, c, crl_params)
        gaps = [(expected_features(res[k].occupancy, fmap) - phi_e[k]) / T for k in range(bundle.num_tasks)]
        constraints.append(c)
        results.append(res)
        task_losses.append([float(played @ g) for g in gaps])
        grads.append(_fold_mean(gaps, order))
        w = ftrl_update(grads, alpha, cset)
    trace = IclTrace(constraints, results, np.array(grads), [0.0] * num_rounds, cset, float(alpha), T,
                     task_ids=bundle.task_ids)
    trace.regret_curve = regret_curve(trace.grads, trace.weights, cset)
    trace.diagnostics["task_losses"] = task_losses
    trace.diagnostics["assumption"] = report
    trace.selected = select_multitask(trace, bundle, fmap, crl_params, validation)
    return trace


def select_multitask(trace, bundle, fmap, crl_params=CrlParams(), validation=None):
    """Selection over candidates using held-out tasks (re-solved) or held-out demos."""
    if validation is not None:
        phi_val = expert_feature_vectors(validation, fmap)
        order = validation.order()
        per_traj = [trajectory_features(d, fmap) for d in validation.expert_trajs]
        gaps, rewards = [], []
        for c in trace.constraints:
            res = _solve_tasks(validation, c, crl_params)
            gaps.append(_fold_mean([expected_features(res[k].occupancy, fmap) - phi_val[k] for k in order], order))
            rewards.append(float(np.mean([res[k].achieved_value for k in order])))
    else:
        use_val = bundle.validation_trajs is not None and all(bundle.validation_trajs)
        phi_val = expert_feature_vectors(bundle, fmap, validation=use_val)
        source = bundle.validation_trajs if use_val else bundle.expert_trajs
        per_traj = [trajectory_features(d, fmap) for d in source]
        order = bundle.order()
        gaps, rewards = [], []
        for res in trace.policies:
            gaps.append(_fold_mean([expected_features(res[k].occupancy, fmap) - phi_val[k] for k in order], order))
            rewards.append(float(np.mean([res[k].achieved_value for k in order])))
    K = len(per_traj)
    ses = [standard_error(x) for x in per_traj]
    noise = lambda w: math.sqrt(sum(se(w) ** 2 for se in ses)) / K  # noqa: E731
    return selection_index(gaps, rewards, trace.constraints, trace.horizon, "all", noise)


def estimate_V(c, per_task_results):
    """Mean over tasks of J(pi^k, c) - J(pi_E^k, c) from (learner occupancy, expert features) pairs."""
    if not per_task_results:
        raise ValueError("need at least one task")
    gaps = [float(c.weights @ (expected_features(occ, c.feature_map) - np.asarray(phi_e))) for occ, phi_e in per_task_results]
    return float(np.mean(gaps))


def sample_complexity(class_size, delta, epsilon, horizon):
    """Tasks needed so every V(c) in a finite class is within epsilon w.p. >= 1 - delta.

    Hoeffding on values in a range of width 2T plus a union bound:
    K = ceil((2T)^2 / (2 eps^2) * ln(2 |F| / delta)).
    """
    if not 0 < delta < 1:
        raise ValueError("delta must lie in (0, 1)")
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    if class_size < 1 or horizon < 1:
        raise ValueError("class_size and horizon must be >= 1")
    return math.ceil((2 * horizon) ** 2 / (2 * epsilon**2) * math.log(2 * class_size / delta))


def reward_condition_bound(class_size, delta, epsilon):
    """The smaller count ln(2 |F| / delta) / (2 eps^2) for the indicator-valued condition."""
    if not 0 < delta < 1 or not epsilon > 0:
        raise ValueError("need 0 < delta < 1 and epsilon > 0")
    return math.ceil(math.log(2 * class_size / delta) / (2 * epsilon**2))


def expert_safe_count(bundle, c):
    """How many tasks' demos have empirical value <= 0 under c (a diagnostic only)."""
    c_tab = as_table(c.to_signal() if isinstance(c, LinearConstraint) else c)
    from .mdp import empirical_value

    return sum(empirical_value(d, c_tab) <= 0 for d in bundle.expert_trajs)


def _extreme_points(cset, count, seed):
    gen = _rng.stream(seed, "extreme-points")
    dirs = [s * e for e in np.eye(cset.dim) for s in (1.0, -1.0)]
    dirs += list(gen.standard_normal((max(0, count - len(dirs)), cset.dim)))
    return [linear_argmax(d, cset) for d in dirs[:count]]


def check_assumption(bundle, fmap, cset, true_c=None, spot_checks=8, seed=0):
    """Diagnostic report: expert safety under c*, nonempty restriction, per-constraint feasibility."""
    report = {"expert_violation_under_truth": None, "truth_ok": None}
    if true_c is not None:
        c_tab = as_table(true_c)
        from .mdp import empirical_value

        avg = float(np.mean([empirical_value(d, c_tab) for d in bundle.expert_trajs]))
        report["expert_violation_under_truth"] = avg
        report["truth_ok"] = avg <= 0.0
    try:
        build_restricted_set(cset, expert_feature_vectors(bundle, fmap))
        report["restricted_set_nonempty"] = True
    except InfeasibleRestriction:
        report["restricted_set_nonempty"] = False
        warnings.warn("restricting the class to expert-safe constraints left it empty", AssumptionWarning)
    infeasible = []
    for w in _extreme_points(cset, spot_checks, seed) if spot_checks else []:
        vals = fmap.evaluate(w)
        scale = float(np.max(np.abs(vals)))
        if scale == 0:
            continue
        best_min = -optimal_value(bundle.mdp, -vals / scale)
        if best_min > 1e-9:
            infeasible.append({"weights": w.tolist(), "min_value": best_min * scale})
    report["spot_checks"] = spot_checks
    report["infeasible_constraints"] = infeasible
    report["ok"] = bool(report["restricted_set_nonempty"] and not infeasible and report["truth_ok"] is not False)
    return report


def check_constraint_feasible(mdp, c):
    """min_pi J(pi, c) <= 0, decided by an exact best response to -c."""
    vals = as_table(c)
    return -optimal_value(mdp, -vals) <= 1e-9
