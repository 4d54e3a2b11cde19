"""Recovering a constraint from saturating experts by linear algebra.

If several optimal experts all sit exactly on the constraint boundary,
<rho_E^k, c*> = delta for every k, so c* is orthogonal to every difference of
their (time-aggregated) occupancies. With enough experts in general position
the orthogonal complement is one-dimensional.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from . import rng as _rng
from .mdp import OccupancyMeasure, ScalarSignal, as_table, occupancy, random_mdp, value
from .solvers import optimal_value, rl_best_response, saturating_soft_policy, soft_rl


class DegenerateInput(ValueError):
    pass


def aggregate(occ):
    """Per-(s, a) visitation summed over time, flattened to length S*A."""
    if isinstance(occ, OccupancyMeasure):
        return occ.aggregate()
    return np.asarray(occ, dtype=float).reshape(-1)


def occupancy_difference_matrix(experts):
    """Rows rho_i - rho_{i+1} for consecutive experts."""
    rows = [aggregate(e) for e in experts]
    if len(rows) < 2:
        raise ValueError("need at least two experts")
    R = np.array(rows)
    return R[:-1] - R[1:]


@dataclass(frozen=True)
class NullSpaceResult:
    c_hat: np.ndarray  # unit vector, or the basis (rows) when not identifiable
    null_dim: int
    singular_values: np.ndarray

    @property
    def identifiable(self):
        return self.null_dim == 1


def null_space_constraint(diff_matrix, unsafe_probe, tol=1e-8, anchor=None):
    """Null space of the difference matrix by SVD with cutoff tol * sigma_max.

    ``anchor`` adds rows known to be orthogonal to c* as well (an expert's
    occupancy when the budget is 0); differences alone always leave the
    all-ones direction in the null space, since every occupancy has mass T.
    A one-dimensional null space is returned as a unit vector with positive
    inner product against ``unsafe_probe``.
    """
    M = np.atleast_2d(np.asarray(diff_matrix, dtype=float))
    if anchor is not None:
        M = np.vstack([M, np.atleast_2d(np.asarray(anchor, dtype=float))])
    if M.size == 0:
        raise DegenerateInput("matrix is empty")
    _, s, Vt = np.linalg.svd(M, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        raise DegenerateInput("all-zero occupancy-difference matrix")
    rank = int(np.sum(s > tol * s[0]))
    basis = Vt[rank:]
    if len(basis) != 1:
        return NullSpaceResult(basis, len(basis), s)
    c = basis[0]
    if c @ aggregate(unsafe_probe) < 0:
        c = -c
    return NullSpaceResult(c / np.linalg.norm(c), 1, s)


def to_signal(c_hat, shape):
    """Rescale to max-abs 1 and reshape into a ScalarSignal."""
    c = np.asarray(c_hat, dtype=float)
    return ScalarSignal((c / np.max(np.abs(c))).reshape(shape))


def verify_saturation(mdp, rewards, expert_values, tol=1e-6):
    """Per task: is the expert strictly below the unconstrained optimum?"""
    report = []
    for r, je in zip(rewards, expert_values):
        opt = optimal_value(mdp, r)
        report.append({"optimum": opt, "expert": float(je), "gap": opt - float(je), "saturated": opt - float(je) > tol})
    return report


def verify_bundle_saturation(bundle, tol=1e-6):
    """verify_saturation on a TaskBundle; exact expert values when policies are attached."""
    from .mdp import empirical_value

    if bundle.expert_policies:
        vals = [value(bundle.mdp, p, r) for p, r in zip(bundle.expert_policies, bundle.rewards)]
    else:
        vals = [empirical_value(d, r) for d, r in zip(bundle.expert_trajs, bundle.rewards)]
    return verify_saturation(bundle.mdp, bundle.rewards, vals, tol)


def check_mixture_independence(experts, tol=1e-6, weight=1e3):
    """Flags experts that a convex combination of the others reproduces.

    Each fit is nonnegative least squares with an extra heavily weighted row
    pushing the weights to sum to 1.
    """
    R = np.array([aggregate(e) for e in experts])
    if len(R) < 2:
        raise ValueError("need at least two experts")
    out = []
    for i in range(len(R)):
        others = np.delete(R, i, axis=0)
        A = np.vstack([others.T, weight * np.ones(len(others))])
        b = np.concatenate([R[i], [weight]])
        lam, _ = nnls(A, b)
        resid = float(np.linalg.norm(others.T @ lam - R[i]))
        out.append({"residual": resid, "violated": resid < tol, "weights": lam.tolist()})
    return out


def reachable_pairs(mdp):
    """Mask of (s, a) pairs visited with positive probability by some policy."""
    reach = mdp.initial_dist > 0
    seen = reach.copy()
    for _ in range(mdp.horizon - 1):
        nxt = (mdp.transition[reach].sum(axis=(0, 1)) > 0)
        reach = nxt
        seen |= nxt
    return np.repeat(seen[:, None], mdp.num_actions, axis=1).reshape(-1)


def relint_check(mdp, experts, floor=1e-9):
    """Positivity surrogate for relative-interior membership: every reachable entry > floor."""
    mask = reachable_pairs(mdp)
    return [bool(np.all(aggregate(e)[mask] > floor)) for e in experts]


def cosine(a, b):
    a, b = np.asarray(a, dtype=float).reshape(-1), np.asarray(b, dtype=float).reshape(-1)
    return float(abs(a @ b) / (np.linalg.norm(a) * np.linalg.norm(b)))


@dataclass(frozen=True, eq=False)
class IdentifiabilityFixture:
    mdp: object
    c_star: ScalarSignal
    rewards: list
    experts: list  # saturating soft policies
    probe: np.ndarray  # aggregate occupancy of an unconstrained optimum


def make_identifiability_fixture(seed, num_states, num_actions, horizon=4, temperature=0.5, num_experts=None,
                                 max_tries=200):
    """Random MDP, random c*, and soft experts saturating J(pi, c*) = 0 exactly.

    A reward is kept only when its unconstrained soft policy violates c*
    (so the constraint binds); soft experts keep every action probability
    positive, which puts their occupancies in the relative interior. Draws
    where some expert's occupancy is (numerically) a mixture of the others'
    are rejected.
    """
    gen = _rng.stream(seed, "identify-fixture", num_states, num_actions)
    m = num_experts or num_states * num_actions
    for _ in range(max_tries):
        mdp = random_mdp(gen, num_states, num_actions, horizon)
        c = gen.uniform(-1, 1, size=(num_states, num_actions))
        if -optimal_value(mdp, -c) >= -0.1 * horizon:
            continue  # need a comfortably safe policy
        rewards, experts = [], []
        for _ in range(50 * m):
            r = gen.uniform(-1, 1, size=(num_states, num_actions))
            if value(mdp, soft_rl(mdp, r, temperature), c) <= 0.05 * horizon:
                continue
            pol, _ = saturating_soft_policy(mdp, r, c, 0.0, temperature)
            rewards.append(ScalarSignal(r))
            experts.append(pol)
            if len(experts) == m:
                break
        if len(experts) < m:
            continue
        occs = [occupancy(mdp, p).aggregate() for p in experts]
        if any(x["violated"] for x in check_mixture_independence(occs, tol=1e-4)):
            continue
        if len(experts) == m:
            probe = occupancy(mdp, rl_best_response(mdp, rewards[0])).aggregate()
            return IdentifiabilityFixture(mdp, ScalarSignal(c), rewards, experts, probe)
    raise RuntimeError("could not build a binding fixture")


def identify(mdp, experts, probe, c_star=None, rewards=None, tol=1e-8, budget_zero=True):
    """Full identifiability report for a set of expert policies (or occupancies)."""
    occs = [occupancy(mdp, e).aggregate() if not isinstance(e, np.ndarray) else e for e in experts]
    diff = occupancy_difference_matrix(occs)
    res = null_space_constraint(diff, probe, tol, anchor=occs[0] if budget_zero else None)
    report = {
        "null_dim": res.null_dim,
        "c_hat": res.c_hat.tolist(),
        "cosine_to_truth": None,
        "relint": relint_check(mdp, occs),
        "mixture_independence": check_mixture_independence(occs),
    }
    if c_star is not None and res.identifiable:
        report["cosine_to_truth"] = cosine(res.c_hat, as_table(c_star))
    if rewards is not None:
        vals = [value(mdp, e, r) for e, r in zip(experts, rewards)] if not isinstance(experts[0], np.ndarray) else None
        report["saturation"] = verify_saturation(mdp, rewards, vals) if vals else None
    return report
