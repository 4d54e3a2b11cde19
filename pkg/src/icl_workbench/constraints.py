"""Feature-linear constraint classes and the constraint player's updates.

A constraint is c_w(s, a) = <w, phi(s, a)> with w restricted to a convex set
(a Euclidean ball, optionally cut by halfspaces <g_k, w> <= b_k). Every value
J(pi, c_w) reduces to <w, Phi(rho_pi)> with Phi the expected feature sum, so
the constraint player faces linear losses.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .mdp import ScalarSignal, ShapeError

PROJ_TOL = 1e-8
PROJ_MAX_ITERS = 10_000


class DescriptorError(ValueError):
    """The constraint set is empty (or could not be shown nonempty)."""


class InfeasibleRestriction(DescriptorError):
    """Restricting to expert-safe constraints left nothing (Assumption-1 failure)."""


@dataclass(frozen=True, eq=False)
class FeatureMap:
    features: np.ndarray  # S x A x d
    id: str
    labels: tuple = ()

    def __post_init__(self):
        phi = np.array(self.features, dtype=float)
        if phi.ndim != 3:
            raise ShapeError(f"features must be S x A x d, got {phi.shape}")
        if np.max(np.abs(phi)) > 1.0 + 1e-12:
            raise ValueError("features must satisfy |phi(s, a)|_inf <= 1")
        phi.setflags(write=False)
        object.__setattr__(self, "features", phi)

    @property
    def dim(self):
        return self.features.shape[2]

    @property
    def shape(self):
        return self.features.shape[:2]

    def evaluate(self, weights):
        return self.features @ np.asarray(weights, dtype=float)


_REGISTRY = {}


def register_feature_map(name):
    def deco(builder):
        _REGISTRY[name] = builder
        return builder

    return deco


def build_feature_map(name, *args, **kwargs):
    """Resolve a registered feature-map builder ("position", "velocity", "cell-onehot")."""
    if name not in _REGISTRY:
        raise KeyError(f"unknown feature map {name!r}; known: {sorted(_REGISTRY)}")
    return _REGISTRY[name](*args, **kwargs)


@dataclass(frozen=True, eq=False)
class LinearConstraint:
    feature_map: FeatureMap
    weights: np.ndarray
    w_max: float = 1.0

    def __post_init__(self):
        w = np.array(self.weights, dtype=float).reshape(-1)
        if w.shape != (self.feature_map.dim,):
            raise ShapeError(f"weights must have length {self.feature_map.dim}")
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)

    def values(self):
        """Raw S x A table <w, phi(s, a)>, not clipped."""
        return self.feature_map.evaluate(self.weights)

    @property
    def clip_count(self):
        return int(np.sum(np.abs(self.values()) > 1.0))

    def to_signal(self):
        return ScalarSignal(np.clip(self.values(), -1.0, 1.0))

    def scaled(self, factor):
        return LinearConstraint(self.feature_map, factor * self.weights, self.w_max)

    def to_dict(self):
        return {
            "feature_map_id": self.feature_map.id,
            "weights": self.weights.tolist(),
            "W_max": self.w_max,
            "clip_count_last_export": self.clip_count,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True)

    @classmethod
    def from_dict(cls, doc, feature_map):
        if doc["feature_map_id"] != feature_map.id:
            raise ValueError(f"constraint was fit on {doc['feature_map_id']!r}, not {feature_map.id!r}")
        return cls(feature_map, np.array(doc["weights"]), doc["W_max"])


def expected_features(occ, fmap):
    """Phi(rho) = sum_t sum_{s,a} rho_t(s, a) phi(s, a)."""
    rho = occ.rho if hasattr(occ, "rho") else np.asarray(occ)
    if rho.shape[1:] != fmap.shape:
        raise ShapeError(f"occupancy {rho.shape[1:]} does not match feature map {fmap.shape}")
    return np.einsum("tsa,sad->d", rho, fmap.features)


def trajectory_features(trajectories, fmap):
    """Per-trajectory feature totals, n x d."""
    from .mdp import stack

    states, actions = stack(trajectories)
    return fmap.features[states, actions].sum(axis=1)


# -- constraint sets -----------------------------------------------------------


def _ball(x, radius):
    n = np.linalg.norm(x)
    return x if n <= radius else x * (radius / n)


def _halfspace(x, g, b):
    gg = g @ g
    excess = g @ x - b
    if excess <= 0 or gg == 0:
        return x
    return x - (excess / gg) * g


@dataclass(frozen=True, eq=False)
class ConstraintSetDescriptor:
    """{w : |w|_2 <= radius and <g_k, w> <= b_k for all k}."""

    radius: float
    dim: int
    halfspaces: tuple = ()  # of (g_k, b_k)

    def __post_init__(self):
        if not self.radius > 0:
            raise DescriptorError("ball radius must be positive")
        hs = []
        for g, b in self.halfspaces:
            g = np.array(g, dtype=float).reshape(-1)
            if g.shape != (self.dim,):
                raise ShapeError("halfspace normal has wrong dimension")
            g.setflags(write=False)
            hs.append((g, float(b)))
        object.__setattr__(self, "halfspaces", tuple(hs))

    @classmethod
    def ball(cls, dim, radius=1.0):
        return cls(radius, dim)

    def with_halfspaces(self, extra):
        return ConstraintSetDescriptor(self.radius, self.dim, self.halfspaces + tuple(extra))

    def residual(self, w):
        """Largest constraint violation at w (0 when feasible)."""
        w = np.asarray(w, dtype=float)
        worst = max(0.0, np.linalg.norm(w) - self.radius)
        for g, b in self.halfspaces:
            worst = max(worst, g @ w - b)
        return float(worst)

    def contains(self, w, tol=1e-6):
        return self.residual(w) <= tol

    def project(self, z):
        """Euclidean projection by Dykstra's alternating projections."""
        z = np.asarray(z, dtype=float)
        if not self.halfspaces:
            return _ball(z, self.radius)
        ops = [lambda x: _ball(x, self.radius)]
        ops += [lambda x, g=g, b=b: _halfspace(x, g, b) for g, b in self.halfspaces]
        x = z.copy()
        corr = [np.zeros_like(x) for _ in ops]
        for _ in range(PROJ_MAX_ITERS):
            prev = x
            for k, op in enumerate(ops):
                y = op(x + corr[k])
                corr[k] = x + corr[k] - y
                x = y
            if np.linalg.norm(x - prev) <= PROJ_TOL * 1e-2 and self.residual(x) <= PROJ_TOL:
                break
        return x

    def check_nonempty(self, tol=1e-6):
        w = self.project(np.zeros(self.dim))
        if self.residual(w) > tol:
            raise DescriptorError(f"constraint set appears empty (residual {self.residual(w):.3g})")
        return w

    def to_dict(self):
        return {
            "radius": self.radius,
            "dim": self.dim,
            "halfspaces": [[g.tolist(), b] for g, b in self.halfspaces],
        }


def ftrl_update(loss_grads, alpha, cset, method="auto"):
    """FTRL iterate: argmax_w <w, sum_j g_j> - (alpha/2)|w|^2 over the set.

    ``method`` is "closed" (projection of sum g / alpha, exact for any convex
    set), "iterative" (projected gradient ascent to a fixed-point residual of
    1e-8), or "auto" (closed form on a pure ball, iterative otherwise).
    """
    if not alpha > 0:
        raise ValueError("alpha must be positive")
    grads = [np.asarray(g, dtype=float) for g in loss_grads]
    total = np.zeros(cset.dim)
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise ValueError("non-finite loss gradient")
        total = total + g
    if method == "auto":
        method = "closed" if not cset.halfspaces else "iterative"
    if method == "closed":
        w = cset.project(total / alpha)
    elif method == "iterative":
        step = 0.5 / alpha
        w = cset.project(np.zeros(cset.dim))
        for _ in range(PROJ_MAX_ITERS):
            nxt = cset.project(w + step * (total - alpha * w))
            done = np.linalg.norm(nxt - w) <= PROJ_TOL
            w = nxt
            if done:
                break
    else:
        raise ValueError(f"unknown method {method!r}")
    if cset.residual(w) > 1e-6:
        raise DescriptorError("FTRL iterate left the constraint set; is the set empty?")
    return w


def linear_argmax(direction, cset):
    """argmax_w <w, direction> over the set; zero direction gives w = 0."""
    direction = np.asarray(direction, dtype=float)
    norm = np.linalg.norm(direction)
    if norm == 0:
        return np.zeros(cset.dim)
    if not cset.halfspaces:
        return cset.radius * direction / norm
    start = cset.project(direction * (10 * cset.radius / norm))
    cons = [{"type": "ineq", "fun": lambda w: cset.radius**2 - w @ w, "jac": lambda w: -2 * w}]
    for g, b in cset.halfspaces:
        cons.append({"type": "ineq", "fun": lambda w, g=g, b=b: b - g @ w, "jac": lambda w, g=g: -g})
    res = minimize(
        lambda w: -(w @ direction) / norm,
        start,
        jac=lambda w: -direction / norm,
        constraints=cons,
        method="SLSQP",
        options={"ftol": 1e-14, "maxiter": 500},
    )
    w = res.x if cset.residual(res.x) <= 1e-8 else start
    return w if w @ direction >= start @ direction else start


def build_restricted_set(base, expert_feature_vectors):
    """Append <Phi_E^k, w> <= 0 for every task k; raise if nothing is left."""
    vecs = [np.asarray(v, dtype=float) for v in expert_feature_vectors]
    if not vecs:
        raise ValueError("need at least one expert feature vector")
    restricted = base.with_halfspaces((v, 0.0) for v in vecs)
    try:
        restricted.check_nonempty()
    except DescriptorError as err:
        raise InfeasibleRestriction(str(err)) from err
    return restricted


def regression_update(learner_feature_vectors, expert_feature_vectors, cset):
    """Least-squares constraint fit: learner totals -> +1, expert totals -> -1.

    Minimum-norm solution, then projected onto the set. Every sample carries
    equal weight.
    """
    L = np.atleast_2d(np.asarray(learner_feature_vectors, dtype=float))
    E = np.atleast_2d(np.asarray(expert_feature_vectors, dtype=float))
    if L.size == 0 or E.size == 0:
        raise ValueError("both learner and expert samples are required")
    X = np.vstack([L, E])
    y = np.concatenate([np.ones(len(L)), -np.ones(len(E))])
    w, *_ = np.linalg.lstsq(X, y, rcond=None)
    return cset.project(w)


def default_alpha(grad_bound, num_rounds, radius):
    """alpha = G sqrt(N) / D, the standard FTRL tuning for linear losses."""
    return grad_bound * np.sqrt(num_rounds) / radius


def constant_direction(fmap, tol=1e-9):
    """v with <v, phi(s, a)> = 1 everywhere, or None when constants are not in the span.

    Moving w along v shifts c_w by a constant, which leaves every
    learner-minus-expert loss unchanged.
    """
    X = fmap.features.reshape(-1, fmap.dim)
    v, *_ = np.linalg.lstsq(X, np.ones(len(X)), rcond=None)
    if np.max(np.abs(X @ v - 1.0)) > tol:
        return None
    return v


def saturate_level(weights, fmap, expert_feature_vectors, horizon):
    """Shift c_w by the largest constant keeping every expert's value <= 0.

    Afterwards the least safe expert sits exactly at 0. Weights are returned
    unchanged when the feature map cannot express constants.
    """
    v = constant_direction(fmap)
    w = np.asarray(weights, dtype=float)
    if v is None:
        return w
    worst = max(float(w @ np.asarray(p, dtype=float)) for p in expert_feature_vectors)
    return w - (worst / horizon) * v
