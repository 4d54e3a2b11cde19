"""Exact RL best responses and the Lagrangian constrained-RL game.

``crl`` alternates a policy player (exact best response to r - lambda * c)
with a dual player on lambda, and returns the uniform mixture of the policy
iterates. The dual player is either projected gradient ascent ("classic") or
a PID controller on the violation signal ("pid").
"""

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .mdp import MixturePolicy, OccupancyMeasure, Policy, _check_signal, as_table, occupancy, value

TIE_TOL = 1e-12


def _tie_break_argmax(Q):
    """Argmax over the last axis, lowest index among near-ties."""
    top = Q.max(axis=-1, keepdims=True)
    scale = max(1.0, float(np.max(np.abs(top))))
    return np.argmax(Q >= top - TIE_TOL * scale, axis=-1)


def _greedy(mdp, f):
    T = mdp.horizon
    actions = np.empty((T, mdp.num_states), dtype=int)
    V = np.zeros(mdp.num_states)
    for t in reversed(range(T)):
        Q = f + mdp.expected_next(V)
        actions[t] = _tie_break_argmax(Q)
        V = np.take_along_axis(Q, actions[t][:, None], axis=1)[:, 0]
    return actions, float(mdp.initial_dist @ V)


def rl_best_response(mdp, signal):
    """Deterministic optimal policy by finite-horizon backward induction.

    Ties go to the lowest action index.
    """
    f = as_table(signal)
    _check_signal(mdp, f)
    actions, _ = _greedy(mdp, f)
    return Policy.deterministic(actions, mdp.num_actions)


def optimal_value(mdp, signal):
    """max over policies of J(pi, signal)."""
    f = as_table(signal)
    _check_signal(mdp, f)
    return _greedy(mdp, f)[1]


def soft_rl(mdp, signal, temperature):
    """Entropy-regularized best response: softmax of the soft Q-function.

    Every action keeps strictly positive probability.
    """
    if not temperature > 0:
        raise ValueError("temperature must be positive")
    f = as_table(signal)
    _check_signal(mdp, f)
    T = mdp.horizon
    probs = np.empty((T,) + mdp.shape)
    V = np.zeros(mdp.num_states)
    for t in reversed(range(T)):
        Q = (f + mdp.expected_next(V)) / temperature
        probs[t] = softmax(Q, axis=1)
        V = temperature * logsumexp(Q, axis=1)
    # softmax can underflow to exact zeros at tiny temperatures
    probs = np.maximum(probs, np.finfo(float).tiny)
    probs /= probs.sum(axis=2, keepdims=True)
    return Policy(probs)


def best_response(mdp, signal, temperature=None):
    if temperature is None:
        return rl_best_response(mdp, signal)
    return soft_rl(mdp, signal, temperature)


@dataclass(frozen=True)
class CrlParams:
    num_iters: int = 200
    eta0: float = 1.0
    schedule: str = "sqrt"  # eta_i = eta0 / sqrt(i); "constant" gives eta_i = eta0
    dual_mode: str = "classic"
    pid_gains: tuple = (0.25, 0.05, 0.1)
    lambda_max: float = 100.0
    temperature: float = None  # None: exact greedy best responses

    def __post_init__(self):
        if self.num_iters < 1:
            raise ValueError("num_iters must be >= 1")
        if self.dual_mode not in ("classic", "pid"):
            raise ValueError(f"unknown dual_mode {self.dual_mode!r}")
        if self.schedule not in ("sqrt", "constant"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if len(self.pid_gains) != 3 or min(self.pid_gains) < 0:
            raise ValueError("pid_gains must be three nonnegative numbers")
        if not self.lambda_max > 0 or not self.eta0 > 0:
            raise ValueError("lambda_max and eta0 must be positive")
        if self.temperature is not None and not self.temperature > 0:
            raise ValueError("temperature must be positive or None")
        object.__setattr__(self, "pid_gains", tuple(float(g) for g in self.pid_gains))

    def lr(self, i):
        """Dual step size for round i (1-based)."""
        if self.schedule == "constant":
            return self.eta0
        return self.eta0 / np.sqrt(i)

    def to_dict(self):
        return {
            "num_iters": self.num_iters,
            "eta0": self.eta0,
            "schedule": self.schedule,
            "dual_mode": self.dual_mode,
            "pid_gains": list(self.pid_gains),
            "lambda_max": self.lambda_max,
            "temperature": self.temperature,
        }

    @classmethod
    def from_dict(cls, doc):
        doc = dict(doc)
        if "pid_gains" in doc:
            doc["pid_gains"] = tuple(doc["pid_gains"])
        return cls(**doc)


@dataclass(frozen=True, eq=False)
class CrlResult:
    mixture: MixturePolicy
    last_iterate: Policy
    lambda_trace: np.ndarray  # lambda_i used in round i, i = 1..N
    final_lambda: float  # the value after the last dual update
    achieved_value: float
    achieved_violation: float
    occupancy: object = field(repr=False, default=None)
    delta: float = 0.0

    def to_dict(self, policy_file=None):
        return {
            "lambda_trace": [float(x) for x in self.lambda_trace],
            "final_lambda": self.final_lambda,
            "achieved_value": self.achieved_value,
            "achieved_violation": self.achieved_violation,
            "delta": self.delta,
            "policy_file": policy_file,
        }

    def to_json(self, policy_file=None):
        return json.dumps(self.to_dict(policy_file), sort_keys=True)


class _Pid:
    def __init__(self, gains, lambda_max):
        self.kp, self.ki, self.kd = gains
        self.lambda_max = lambda_max
        self.integral = 0.0
        self.prev = None

    def step(self, error):
        self.integral = min(self.lambda_max, max(0.0, self.integral + self.ki * error))
        deriv = 0.0 if self.prev is None else max(0.0, error - self.prev)
        self.prev = error
        return min(self.lambda_max, max(0.0, self.kp * error + self.integral + self.kd * deriv))


def crl(mdp, r, c, delta, params=CrlParams()):
    """Constrained RL by Lagrangian game solving.

    Round i plays pi_i = best response to r - lambda_i c (lambda_1 = 0), then
    moves lambda on the violation J(pi_i, c) - delta, projected onto
    [0, lambda_max]. Returns the uniform mixture over pi_1..pi_N; identical
    deterministic iterates are merged with their weights summed.
    """
    r, c = as_table(r), as_table(c)
    _check_signal(mdp, r)
    _check_signal(mdp, c)
    if abs(delta) > mdp.horizon + 1e-9:
        raise ValueError("|delta| must not exceed the horizon")
    N = params.num_iters
    lam = 0.0
    pid = _Pid(params.pid_gains, params.lambda_max) if params.dual_mode == "pid" else None
    trace = np.empty(N)
    rho_sum = 0.0
    unique = {}
    order = []
    policy = None
    for i in range(1, N + 1):
        trace[i - 1] = lam
        policy = best_response(mdp, r - lam * c, params.temperature)
        rho = occupancy(mdp, policy).rho
        rho_sum = rho_sum + rho
        key = policy.action_probs.tobytes()
        if key not in unique:
            unique[key] = [policy, 0]
            order.append(key)
        unique[key][1] += 1
        error = float(np.sum(rho * c)) - delta
        if pid is None:
            lam = min(params.lambda_max, max(0.0, lam + params.lr(i) * error))
        else:
            lam = pid.step(error)
    comps = [unique[k][0] for k in order]
    weights = np.array([unique[k][1] for k in order], dtype=float) / N
    mixture = MixturePolicy(comps, weights)
    occ = OccupancyMeasure(rho_sum / N)
    return CrlResult(
        mixture=mixture,
        last_iterate=policy,
        lambda_trace=trace,
        final_lambda=lam,
        achieved_value=float(np.sum(occ.rho * r)),
        achieved_violation=float(np.sum(occ.rho * c)),
        occupancy=occ,
        delta=float(delta),
    )


def crl_dual_oracle(mdp, r, c, delta, grid):
    """min over the lambda grid of  max_pi J(pi, r - lambda c) + lambda delta.

    An upper bound on the constrained optimum by weak duality.
    """
    r, c = as_table(r), as_table(c)
    grid = np.asarray(grid, dtype=float)
    if grid.size == 0:
        raise ValueError("grid must be nonempty")
    return min(optimal_value(mdp, r - lam * c) + lam * delta for lam in grid)


def saturating_soft_policy(mdp, r, c, delta, temperature, tol=1e-12, lambda_hi=1e4):
    """Soft-optimal policy for r - lambda c with lambda chosen so J(pi, c) = delta.

    Bisection on lambda; J(soft_rl(r - lambda c), c) is nonincreasing in
    lambda. Returns (policy, lambda). If the constraint is slack at lambda = 0
    the unconstrained soft policy is returned with lambda = 0.
    """
    r, c = as_table(r), as_table(c)

    def violation(lam):
        pol = soft_rl(mdp, r - lam * c, temperature)
        return value(mdp, pol, c) - delta, pol

    g0, pol0 = violation(0.0)
    if g0 <= 0:
        return pol0, 0.0
    ghi, _ = violation(lambda_hi)
    if ghi > 0:
        raise ValueError("constraint level is not attainable by soft policies")
    lo, hi = 0.0, lambda_hi
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        g, _ = violation(mid)
        if g > 0:
            lo = mid
        else:
            hi = mid
        if hi - lo < tol * max(1.0, hi):
            break
    _, pol = violation(hi)
    return pol, hi
