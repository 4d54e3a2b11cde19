"""Independent reference computations used only by the tests."""

import itertools

import numpy as np
from scipy.optimize import linprog


def cmdp_lp(mdp, r, c, delta):
    """Exact constrained optimum max J(r) s.t. J(c) <= delta via the occupancy LP.

    Variables are rho_t(s, a); equality rows are the Bellman flow constraints.
    Returns (optimal value, rho) or (None, None) when infeasible.
    """
    T, (S, A) = mdp.horizon, mdp.shape
    n = T * S * A
    idx = lambda t, s, a: (t * S + s) * A + a  # noqa: E731
    rows, rhs = [], []
    for s in range(S):
        row = np.zeros(n)
        for a in range(A):
            row[idx(0, s, a)] = 1.0
        rows.append(row)
        rhs.append(mdp.initial_dist[s])
    for t in range(T - 1):
        for s2 in range(S):
            row = np.zeros(n)
            for a in range(A):
                row[idx(t + 1, s2, a)] = 1.0
            for s in range(S):
                for a in range(A):
                    row[idx(t, s, a)] -= mdp.transition[s, a, s2]
            rows.append(row)
            rhs.append(0.0)
    cost = -np.tile(np.asarray(r).reshape(-1), T)
    ub = np.tile(np.asarray(c).reshape(-1), T)[None, :]
    res = linprog(cost, A_ub=ub, b_ub=[delta], A_eq=np.array(rows), b_eq=rhs, bounds=(0, None), method="highs")
    if res.status != 0:
        return None, None
    return -res.fun, res.x.reshape(T, S, A)


def enumerate_deterministic_values(mdp, f):
    """Max of J over all deterministic nonstationary policies, by brute force.

    Feasible only for tiny instances: (A^S)^T policies.
    """
    from icl_workbench.mdp import Policy, value

    T, (S, A) = mdp.horizon, mdp.shape
    best = -np.inf
    for choice in itertools.product(range(A), repeat=S * T):
        pol = Policy.deterministic(np.array(choice).reshape(T, S), A)
        best = max(best, value(mdp, pol, f))
    return best


def monte_carlo_occupancy(mdp, policy, n, gen):
    """Occupancy estimate from n rollouts written with plain per-step loops over arrays."""
    T, (S, A) = mdp.horizon, mdp.shape
    counts = np.zeros((T, S, A))
    s = gen.choice(S, size=n, p=mdp.initial_dist)
    for t in range(T):
        probs = policy.action_probs[t][s]
        u = gen.random(n)
        a = (u[:, None] > np.cumsum(probs, axis=1)).sum(axis=1)
        a = np.minimum(a, A - 1)
        np.add.at(counts[t], (s, a), 1.0)
        nxt = mdp.transition[s, a]
        u = gen.random(n)
        s = np.minimum((u[:, None] > np.cumsum(nxt, axis=1)).sum(axis=1), S - 1)
    return counts / n


def grid_argmax_linear(g, feasible, radius, step=0.005):
    """argmax <w, g> - 0.5 alpha |w|^2 style objectives by dense 2-d grid search.

    ``feasible`` is a predicate on w; returns the best grid point for the
    objective <w, g> - 0.5 |w|^2 (alpha = 1).
    """
    xs = np.arange(-radius, radius + step / 2, step)
    W = np.array(np.meshgrid(xs, xs)).reshape(2, -1).T
    W = W[np.array([feasible(w) for w in W])]
    obj = W @ g - 0.5 * np.sum(W**2, axis=1)
    return W[np.argmax(obj)]
