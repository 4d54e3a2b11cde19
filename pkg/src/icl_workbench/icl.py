"""Single-task inverse constraint learning as a constraint-vs-policy game.

Round i: the policy player solves CRL under the current constraint c_i with
budget equal to the expert's empirical value under c_i; the constraint player
then receives the linear gain (1/T) <w, Phi(pi_i) - Phi_E> and moves by FTRL.
"""

import json
from dataclasses import dataclass, field

import numpy as np

from .constraints import LinearConstraint, default_alpha, expected_features, ftrl_update, linear_argmax, trajectory_features
from .mdp import as_table
from .solvers import CrlParams, crl

SELECT_Z = 2.0


@dataclass(eq=False)
class IclTrace:
    constraints: list  # LinearConstraint c_1..c_N
    policies: list  # CrlResult per round (a list of them per task in the multi-task game)
    grads: np.ndarray  # N x d, g_i = (Phi(pi_i) - Phi_E) / T
    deltas: list  # budgets handed to CRL each round
    cset: object
    alpha: float
    horizon: int
    regret_curve: list = field(default_factory=list)  # (i, Reg(i), Reg(i)/i)
    selected: int = 0
    task_ids: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def num_rounds(self):
        return len(self.constraints)

    @property
    def weights(self):
        return np.array([c.weights for c in self.constraints])

    def losses(self):
        """ell_i(c_i) per round."""
        return np.einsum("id,id->i", self.weights, self.grads)

    def loss_table(self):
        """Entry (i, j) is ell_i(c_j)."""
        return self.grads @ self.weights.T

    @property
    def selected_constraint(self):
        return self.constraints[self.selected]

    @property
    def avg_regret(self):
        return self.regret_curve[-1][2] if self.regret_curve else float("nan")

    def regret_rows(self):
        losses = self.losses()
        return [(i, float(losses[i - 1]), reg, avg) for i, reg, avg in self.regret_curve]

    def round_record(self, i):
        """JSON-ready snapshot of round i (0-based)."""
        res = self.policies[i]
        results = res if isinstance(res, list) else [res]
        return {
            "round": i + 1,
            "constraint": self.constraints[i].to_dict(),
            "delta": self.deltas[i],
            "loss": float(self.losses()[i]),
            "crl": [r.to_dict() for r in results],
        }


def per_round_loss(learner_occ, expert_features, c, horizon):
    """(1/T) (J(pi_i, c) - J(pi_E, c)) for a linear constraint."""
    phi = expected_features(learner_occ, c.feature_map)
    return float(c.weights @ (phi - np.asarray(expert_features, dtype=float))) / horizon


def best_in_hindsight(loss_grads, cset, feature_map=None):
    """The fixed constraint with the largest summed gain; returns the weights
    (wrapped in a LinearConstraint when a feature map is given)."""
    grads = np.atleast_2d(np.asarray(loss_grads, dtype=float))
    if grads.shape[0] == 0:
        raise ValueError("need a nonempty gradient history")
    w = linear_argmax(grads.sum(axis=0), cset)
    if feature_map is None:
        return w
    return LinearConstraint(feature_map, w, cset.radius)


def regret_curve(grads, weights, cset):
    """[(i, Reg(i), Reg(i)/i)] for the played weights against each prefix's comparator."""
    grads = np.asarray(grads, dtype=float)
    weights = np.asarray(weights, dtype=float)
    played = np.cumsum(np.einsum("id,id->i", weights, grads))
    prefix = np.cumsum(grads, axis=0)
    out = []
    for i in range(1, len(grads) + 1):
        best = linear_argmax(prefix[i - 1], cset)
        reg = max(0.0, float(best @ prefix[i - 1] - played[i - 1]))
        out.append((i, reg, reg / i))
    return out


def regret(trace, cset=None):
    """(Reg(N), Reg(N)/N) for a finished trace."""
    cset = cset or trace.cset
    i, reg, avg = regret_curve(trace.grads, trace.weights, cset)[-1]
    return reg, avg


def normalized_problem(c, delta):
    """CRL budget J(pi, c) <= delta is scale-invariant; rescale c to max-abs 1."""
    vals = c.values()
    scale = float(np.max(np.abs(vals)))
    if scale == 0.0:
        return np.zeros_like(vals), 0.0
    return vals / scale, delta / scale


def _anneal(buffer, i, n):
    if not buffer:
        return 0.0
    return buffer * (1.0 - (i - 1) / max(1, n - 1))


def grad_bound(fmap):
    """G with |g_i| <= G: Phi / T is an average of feature vectors."""
    return 2.0 * float(np.max(np.linalg.norm(fmap.features, axis=2)))


def icl(mdp, r, expert_trajs, fmap, cset, num_rounds, crl_params=CrlParams(), seed=0, alpha=None,
        validation_trajs=None, cost_buffer=0.0, select_rule="all"):
    """Run the single-task game for ``num_rounds`` rounds and select a constraint.

    c_1 has w = 0 (plain RL in round 1). Validation uses ``validation_trajs``
    when given, otherwise the training demos. ``cost_buffer`` adds a budget
    allowance annealed linearly to 0 over the rounds.
    """
    if num_rounds < 1:
        raise ValueError("num_rounds must be >= 1")
    if not expert_trajs:
        raise ValueError("need at least one expert trajectory")
    T = mdp.horizon
    r_tab = as_table(r)
    phi_e = trajectory_features(expert_trajs, fmap).mean(axis=0)
    alpha = alpha or default_alpha(grad_bound(fmap), num_rounds, cset.radius)
    w = cset.project(np.zeros(fmap.dim))
    constraints, results, grads, deltas = [], [], [], []
    for i in range(1, num_rounds + 1):
        c = LinearConstraint(fmap, w, cset.radius)
        delta = float(w @ phi_e) + _anneal(cost_buffer, i, num_rounds)
        c_norm, d_norm = normalized_problem(c, delta)
        res = crl(mdp, r_tab, c_norm, float(np.clip(d_norm, -T, T)), crl_params)
        phi = expected_features(res.occupancy, fmap)
        constraints.append(c)
        results.append(res)
        deltas.append(delta)
        grads.append((phi - phi_e) / T)
        w = ftrl_update(grads, alpha, cset)
    trace = IclTrace(constraints, results, np.array(grads), deltas, cset, float(alpha), T)
    trace.regret_curve = regret_curve(trace.grads, trace.weights, cset)
    trace.diagnostics["expert_features"] = phi_e.tolist()
    trace.selected = select_validation(trace, mdp, r_tab, validation_trajs or expert_trajs, rule=select_rule)
    return trace


def _normalized_weights(constraints):
    rows = []
    for c in constraints:
        scale = float(np.max(np.abs(c.values())))
        if scale > 0:
            rows.append(c.weights / scale)
    return np.array(rows)


def selection_index(gaps, rewards, constraints, horizon, rule="all", noise=None, z=SELECT_Z):
    """Pick a candidate given its feature gaps to the validation expert.

    gaps[i] = Phi(pi_i) - Phi_E,val (task-averaged in the multi-task game).
    rule "all": key_i = max(0, max_j (<c_j, gap_i> - z * se_j) / T) over
    every nonzero candidate constraint scaled to max-abs 1, where se_j is the
    standard error of the validation estimate under c_j (``noise`` maps a
    weight vector to it; zero when omitted). rule "own": key_i =
    max(0, <c_i, gap_i>). Smallest key wins, ties go to larger reward, then
    to the earlier round.
    """
    gaps = np.atleast_2d(np.asarray(gaps, dtype=float))
    rewards = np.asarray(rewards, dtype=float)
    if rule == "own":
        keys = np.maximum(0.0, np.einsum("id,id->i", np.array([c.weights for c in constraints]), gaps))
    elif rule == "all":
        W = _normalized_weights(constraints)
        if len(W) == 0:
            keys = np.zeros(len(gaps))
        else:
            se = np.array([noise(w) for w in W]) if noise else np.zeros(len(W))
            keys = np.maximum(0.0, (gaps @ W.T - z * se).max(axis=1) / horizon)
    else:
        raise ValueError(f"unknown selection rule {rule!r}")
    keys = np.round(keys, 12)
    order = sorted(range(len(keys)), key=lambda i: (keys[i], -rewards[i], i))
    return order[0]


def standard_error(per_traj_features):
    """Maps w to the standard error of the mean of <w, Phi(xi)> over trajectories."""
    X = np.atleast_2d(per_traj_features)
    n = len(X)
    cov = np.cov(X, rowvar=False) if n > 1 else np.zeros((X.shape[1], X.shape[1]))
    cov = np.atleast_2d(cov)
    return lambda w: float(np.sqrt(max(0.0, w @ cov @ w) / n))


def select_validation(trace, mdp, r, validation_trajs, rule="all", z=SELECT_Z):
    """Index of the candidate whose policy looks safest on held-out expert data."""
    if not validation_trajs:
        raise ValueError("validation set is empty")
    fmap = trace.constraints[0].feature_map
    per_traj = trajectory_features(validation_trajs, fmap)
    phi_val = per_traj.mean(axis=0)
    r_tab = as_table(r)
    gaps, rewards = [], []
    for res in trace.policies:
        gaps.append(expected_features(res.occupancy, fmap) - phi_val)
        rewards.append(float(np.sum(res.occupancy.rho * r_tab)))
    return selection_index(gaps, rewards, trace.constraints, mdp.horizon, rule, standard_error(per_traj), z)


def oracle_best(trace, c_star, r):
    """Round whose policy has the smallest true violation, ties to larger reward."""
    c_tab, r_tab = as_table(c_star), as_table(r)
    keys = []
    for i, res in enumerate(trace.policies):
        rho = res.occupancy.rho
        keys.append((round(float(np.sum(rho * c_tab)), 9), -float(np.sum(rho * r_tab)), i))
    return min(keys)[2]


def trace_to_json(trace):
    return json.dumps(
        {
            "rounds": trace.num_rounds,
            "alpha": trace.alpha,
            "selected": trace.selected,
            "selected_constraint": trace.selected_constraint.to_dict(),
            "regret": trace.regret_curve[-1][1],
            "avg_regret": trace.avg_regret,
        },
        sort_keys=True,
    )
