"""Exact finite-horizon tabular MDP engine.

Policies are time-indexed tables ``pi[t, s, a]``; occupancy measures are kept
per timestep as ``rho[t, s, a]`` so that flow constraints stay checkable.
Every value J(pi, f) is the inner product of the occupancy with the signal,
summed over the T steps t = 0..T-1.
"""

import json
from dataclasses import dataclass

import numpy as np

from . import rng as _rng

PROB_TOL = 1e-9


class ShapeError(ValueError):
    pass


def _readonly(x, dtype=float):
    arr = np.array(x, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _check_distribution(p, axis, what):
    if np.any(p < 0):
        raise ValueError(f"{what} has negative entries")
    sums = p.sum(axis=axis)
    if np.any(np.abs(sums - 1.0) > PROB_TOL):
        raise ValueError(f"{what} does not sum to 1 (max error {np.max(np.abs(sums - 1.0)):.3g})")


@dataclass(frozen=True, eq=False)
class Mdp:
    transition: np.ndarray
    initial_dist: np.ndarray
    horizon: int

    def __post_init__(self):
        P = _readonly(self.transition)
        mu = _readonly(self.initial_dist)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ShapeError(f"transition must be S x A x S, got {P.shape}")
        if mu.shape != (P.shape[0],):
            raise ShapeError(f"initial_dist must have length {P.shape[0]}, got {mu.shape}")
        if int(self.horizon) < 1:
            raise ValueError("horizon must be >= 1")
        _check_distribution(P, 2, "transition")
        _check_distribution(mu, 0, "initial_dist")
        object.__setattr__(self, "transition", P)
        object.__setattr__(self, "initial_dist", mu)
        object.__setattr__(self, "horizon", int(self.horizon))
        object.__setattr__(self, "_flat", P.reshape(-1, P.shape[0]))

    @property
    def num_states(self):
        return self.transition.shape[0]

    @property
    def num_actions(self):
        return self.transition.shape[1]

    @property
    def shape(self):
        return (self.num_states, self.num_actions)

    def expected_next(self, values):
        """E[values(s') | s, a] as an S x A table."""
        return (self._flat @ values).reshape(self.shape)


@dataclass(frozen=True, eq=False)
class ScalarSignal:
    """A per-(state, action) function with values in [-1, 1]."""

    values: np.ndarray

    def __post_init__(self):
        v = _readonly(self.values)
        if v.ndim != 2:
            raise ShapeError(f"signal must be S x A, got {v.shape}")
        if not np.all(np.isfinite(v)) or np.any(np.abs(v) > 1.0 + 1e-12):
            raise ValueError("signal values must lie in [-1, 1]")
        object.__setattr__(self, "values", v)

    @classmethod
    def zeros(cls, mdp):
        return cls(np.zeros(mdp.shape))

    @classmethod
    def from_state_values(cls, state_values, num_actions):
        v = np.asarray(state_values, dtype=float)
        return cls(np.repeat(v[:, None], num_actions, axis=1))


def as_table(signal):
    """Raw S x A array of a signal; plain arrays pass through unchecked.

    Solvers work with unclipped combinations such as r - lambda * c, which
    can leave [-1, 1]; only ScalarSignal enforces the range.
    """
    if isinstance(signal, ScalarSignal):
        return signal.values
    return np.asarray(signal, dtype=float)


@dataclass(frozen=True, eq=False)
class Policy:
    action_probs: np.ndarray

    def __post_init__(self):
        p = _readonly(self.action_probs)
        if p.ndim != 3:
            raise ShapeError(f"policy must be T x S x A, got {p.shape}")
        _check_distribution(p, 2, "policy")
        object.__setattr__(self, "action_probs", p)

    @property
    def horizon(self):
        return self.action_probs.shape[0]

    @classmethod
    def uniform(cls, mdp):
        T, (S, A) = mdp.horizon, mdp.shape
        return cls(np.full((T, S, A), 1.0 / A))

    @classmethod
    def deterministic(cls, actions, num_actions):
        """Build from an integer table ``actions[t, s]``."""
        actions = np.asarray(actions, dtype=int)
        probs = np.zeros(actions.shape + (num_actions,))
        np.put_along_axis(probs, actions[..., None], 1.0, axis=-1)
        return cls(probs)

    def greedy_actions(self):
        return np.argmax(self.action_probs, axis=2)


@dataclass(frozen=True, eq=False)
class MixturePolicy:
    """Trajectory-level mixture: draw a component once, then follow it."""

    components: tuple
    weights: np.ndarray

    def __post_init__(self):
        comps = tuple(self.components)
        w = _readonly(self.weights)
        if not comps or w.shape != (len(comps),):
            raise ShapeError("need one weight per component")
        _check_distribution(w, 0, "mixture weights")
        shapes = {c.action_probs.shape for c in comps}
        if len(shapes) != 1:
            raise ShapeError("mixture components have different shapes")
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "weights", w)

    @classmethod
    def uniform(cls, components):
        components = tuple(components)
        return cls(components, np.full(len(components), 1.0 / len(components)))

    @property
    def horizon(self):
        return self.components[0].horizon


def mix(first, second, eps):
    """The mixture (1 - eps) * first + eps * second, flattening nested mixtures."""
    parts = []
    for pol, w in ((first, 1.0 - eps), (second, eps)):
        if w <= 0:
            continue
        if isinstance(pol, MixturePolicy):
            parts.extend((c, w * cw) for c, cw in zip(pol.components, pol.weights))
        else:
            parts.append((pol, w))
    comps, weights = zip(*parts)
    weights = np.asarray(weights)
    return MixturePolicy(comps, weights / weights.sum())


@dataclass(frozen=True, eq=False)
class OccupancyMeasure:
    rho: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "rho", _readonly(self.rho))

    @property
    def horizon(self):
        return self.rho.shape[0]

    def aggregate(self):
        """Visitation summed over timesteps, flattened to length S*A (mass T)."""
        return self.rho.sum(axis=0).reshape(-1)

    def state_visits(self):
        return self.rho.sum(axis=2)


@dataclass(frozen=True, eq=False)
class Trajectory:
    states: np.ndarray
    actions: np.ndarray

    def __post_init__(self):
        s = _readonly(self.states, int)
        a = _readonly(self.actions, int)
        if s.shape != a.shape or s.ndim != 1:
            raise ShapeError("states and actions must be equal-length 1-d arrays")
        object.__setattr__(self, "states", s)
        object.__setattr__(self, "actions", a)

    @property
    def steps(self):
        return list(zip(self.states.tolist(), self.actions.tolist()))

    def __len__(self):
        return len(self.states)


def _check_policy(mdp, policy):
    for comp in _components(policy)[0]:
        if comp.action_probs.shape != (mdp.horizon,) + mdp.shape:
            raise ShapeError(
                f"policy shape {comp.action_probs.shape} does not match "
                f"MDP (T={mdp.horizon}, S={mdp.num_states}, A={mdp.num_actions})"
            )


def _components(policy):
    if isinstance(policy, MixturePolicy):
        return policy.components, policy.weights
    return (policy,), np.ones(1)


def _check_signal(mdp, table):
    if table.shape != mdp.shape:
        raise ShapeError(f"signal shape {table.shape} does not match MDP {mdp.shape}")


def _occupancy_single(mdp, probs):
    T = mdp.horizon
    rho = np.empty((T,) + mdp.shape)
    d = mdp.initial_dist
    for t in range(T):
        rho[t] = d[:, None] * probs[t]
        if t + 1 < T:
            d = rho[t].reshape(-1) @ mdp._flat
    return rho


def occupancy(mdp, policy):
    """Exact per-timestep state-action occupancy by forward recursion.

    For a mixture, the weighted average of component occupancies (exact under
    trajectory-level mixing).
    """
    _check_policy(mdp, policy)
    comps, weights = _components(policy)
    rho = sum(w * _occupancy_single(mdp, c.action_probs) for c, w in zip(comps, weights))
    return OccupancyMeasure(rho)


def value(mdp, policy, signal):
    """J(pi, f): expected sum of f(s_t, a_t) over the horizon."""
    f = as_table(signal)
    _check_signal(mdp, f)
    return float(np.sum(occupancy(mdp, policy).rho * f))


def backward_value(mdp, policy, signal):
    """J(pi, f) by backward dynamic programming (independent of occupancy())."""
    f = as_table(signal)
    _check_signal(mdp, f)
    _check_policy(mdp, policy)
    comps, weights = _components(policy)
    total = 0.0
    for comp, w in zip(comps, weights):
        V = np.zeros(mdp.num_states)
        for t in reversed(range(mdp.horizon)):
            Q = f + mdp.expected_next(V)
            V = np.sum(comp.action_probs[t] * Q, axis=1)
        total += w * float(mdp.initial_dist @ V)
    return total


def _sample_categorical(gen, probs):
    cum = np.cumsum(probs, axis=1)
    u = gen.random(len(probs))[:, None] * cum[:, -1:]
    idx = np.argmax(cum > u, axis=1)
    return idx


def sample_batch(mdp, policy, n, gen):
    """Sample n trajectories as integer arrays (states, actions), each n x T."""
    _check_policy(mdp, policy)
    if n < 1:
        raise ValueError("n must be >= 1")
    comps, weights = _components(policy)
    which = gen.choice(len(comps), size=n, p=weights) if len(comps) > 1 else np.zeros(n, int)
    T = mdp.horizon
    states = np.empty((n, T), dtype=int)
    actions = np.empty((n, T), dtype=int)
    s = _sample_categorical(gen, np.broadcast_to(mdp.initial_dist, (n, mdp.num_states)))
    for t in range(T):
        probs = np.empty((n, mdp.num_actions))
        for k, comp in enumerate(comps):
            mask = which == k
            probs[mask] = comp.action_probs[t][s[mask]]
        a = _sample_categorical(gen, probs)
        states[:, t], actions[:, t] = s, a
        if t + 1 < T:
            s = _sample_categorical(gen, mdp.transition[s, a])
    return states, actions


def sample_trajectories(mdp, policy, n, seed):
    """n i.i.d. trajectories, deterministic given ``seed``."""
    states, actions = sample_batch(mdp, policy, n, _rng.stream(seed, "trajectories"))
    return [Trajectory(s, a) for s, a in zip(states, actions)]


def stack(trajectories):
    """(states, actions) arrays of shape n x T from a list of trajectories."""
    if not trajectories:
        raise ValueError("empty trajectory list")
    return (
        np.stack([tr.states for tr in trajectories]),
        np.stack([tr.actions for tr in trajectories]),
    )


def trajectory_returns(trajectories, signal):
    states, actions = stack(trajectories)
    return as_table(signal)[states, actions].sum(axis=1)


def empirical_value(trajectories, signal):
    """Mean over trajectories of the summed signal."""
    if not trajectories:
        raise ValueError("empirical_value needs at least one trajectory")
    return float(np.mean(trajectory_returns(trajectories, signal)))


def empirical_occupancy(trajectories, shape):
    """Per-timestep visitation frequencies, T x S x A."""
    states, actions = stack(trajectories)
    n, T = states.shape
    rho = np.zeros((T,) + tuple(shape))
    for t in range(T):
        np.add.at(rho[t], (states[:, t], actions[:, t]), 1.0 / n)
    return OccupancyMeasure(rho)


def random_mdp(gen, num_states, num_actions, horizon, sparsity=0.0):
    """A random MDP for tests and benchmarks; ``sparsity`` zeroes that share of transitions."""
    P = gen.random((num_states, num_actions, num_states))
    if sparsity > 0:
        P[gen.random(P.shape) < sparsity] = 0.0
        empty = P.sum(axis=2) == 0
        P[empty, gen.integers(num_states, size=empty.sum())] = 1.0
    P /= P.sum(axis=2, keepdims=True)
    mu = gen.random(num_states)
    return Mdp(P, mu / mu.sum(), horizon)


# -- serialization -----------------------------------------------------------


def mdp_to_dict(mdp):
    return {
        "num_states": mdp.num_states,
        "num_actions": mdp.num_actions,
        "horizon": mdp.horizon,
        "transition": mdp.transition.tolist(),
        "initial_dist": mdp.initial_dist.tolist(),
    }


def mdp_from_dict(doc):
    mdp = Mdp(np.array(doc["transition"], dtype=float), np.array(doc["initial_dist"], dtype=float), doc["horizon"])
    if mdp.shape != (doc["num_states"], doc["num_actions"]):
        raise ShapeError("declared num_states/num_actions disagree with transition table")
    return mdp


def save_mdp(mdp, path):
    with open(path, "w") as fh:
        json.dump(mdp_to_dict(mdp), fh)


def load_mdp(path):
    with open(path) as fh:
        return mdp_from_dict(json.load(fh))


def trajectories_to_list(trajectories):
    return [[[int(s), int(a)] for s, a in tr.steps] for tr in trajectories]


def trajectories_from_list(doc):
    out = []
    for steps in doc:
        arr = np.asarray(steps, dtype=int).reshape(-1, 2)
        out.append(Trajectory(arr[:, 0], arr[:, 1]))
    return out


def save_trajectories(trajectories, path):
    with open(path, "w") as fh:
        json.dump(trajectories_to_list(trajectories), fh)


def load_trajectories(path):
    with open(path) as fh:
        return trajectories_from_list(json.load(fh))


def policy_to_dict(policy):
    comps, weights = _components(policy)
    return {
        "weights": np.asarray(weights).tolist(),
        "components": [c.action_probs.tolist() for c in comps],
    }


def policy_from_dict(doc):
    comps = [Policy(np.array(c)) for c in doc["components"]]
    if len(comps) == 1:
        return comps[0]
    return MixturePolicy(comps, np.array(doc["weights"]))
