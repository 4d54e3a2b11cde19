"""Reading interpretable quantities off learned weight vectors."""

import numpy as np

from ..constraints import saturate_level


def velocity_threshold(env, weights, expert_features):
    """Speed where the budget-calibrated learned cost crosses zero.

    The CRL problem J(pi, c_w) <= J_E(c_w) is the same as J(pi, c_w - J_E(c_w)/T) <= 0,
    so the calibrated cost is c_w shifted by the expert's per-step value.
    Returns nan when the speed weight is not positive.
    """
    w = np.asarray(weights, dtype=float)
    if w[0] <= 0:
        return float("nan")
    T = env.mdp.horizon
    level = float(w @ np.asarray(expert_features)) / T
    return float(env.info["v_top"] * (level - w[1]) / w[0])


def boundary_cosine(env, weights):
    """Cosine between the learned (x, y) weights and the true boundary normal."""
    w = np.asarray(weights, dtype=float)[:2]
    truth = np.asarray(env.info["boundary"], dtype=float)
    norm = np.linalg.norm(w)
    if norm == 0:
        return 0.0
    return float(w @ truth / (norm * np.linalg.norm(truth)))


def wall_prediction(env, weights, expert_features):
    """Cells flagged unsafe: calibrated cost > 0, i.e. above 0.5 once mapped from [-1, 1] to [0, 1]."""
    w = saturate_level(weights, env.feature_map, expert_features, env.mdp.horizon)
    vals = env.feature_map.evaluate(w)[:, 0]
    scale = np.max(np.abs(vals))
    if scale == 0:
        return np.zeros(len(vals), dtype=bool)
    return (vals / scale + 1.0) / 2.0 > 0.5


def f1_score(pred, truth):
    pred, truth = np.asarray(pred, dtype=bool), np.asarray(truth, dtype=bool)
    tp = int(np.sum(pred & truth))
    denom = 2 * tp + int(np.sum(pred & ~truth)) + int(np.sum(~pred & truth))
    return 1.0 if denom == 0 else 2.0 * tp / denom


def wall_f1(env, weights, expert_features):
    return f1_score(wall_prediction(env, weights, expert_features), env.info["wall_mask"])


def readout(kind, env, weights, expert_features):
    """(name, value) of the fixture's interpretable readout."""
    if kind == "threshold":
        return "learned_threshold", velocity_threshold(env, weights, expert_features[0])
    if kind == "direction":
        return "boundary_cosine", boundary_cosine(env, weights)
    if kind == "walls":
        return "wall_f1", wall_f1(env, weights, expert_features)
    raise ValueError(f"unknown readout {kind!r}")


def direction_error(env, weights):
    """1 - cos between learned and true weights once constant shifts are projected out.

    Losses ignore constant shifts of c, so only the shift-free part of w is
    comparable. Returns 1 when that part vanishes.
    """
    from ..constraints import constant_direction

    w = np.asarray(weights, dtype=float)
    truth = np.asarray(env.ground_truth.weights, dtype=float)
    v = constant_direction(env.feature_map)
    if v is not None:
        # remove the component along which c_w is constant in feature space
        X = env.feature_map.features.reshape(-1, env.feature_map.dim)
        center = lambda u: X @ u - np.mean(X @ u)  # noqa: E731
        a, b = center(w), center(truth)
    else:
        a, b = w, truth
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(1.0 - a @ b / (na * nb))
