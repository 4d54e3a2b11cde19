"""Pipelines behind the CLI and the files each run directory holds.

Every run writes ``config.json`` first, then pipeline outputs (metrics.csv,
regret.csv, readout.csv, rounds/round_NNN.json, selected_constraint.json,
report.json) and, unless disabled, PNG figures rendered from those files.
Floats are written with ``repr`` so identical runs give identical bytes.
"""

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .. import envs as _envs
from ..constraints import ConstraintSetDescriptor, FeatureMap, LinearConstraint, trajectory_features
from ..icl import icl, normalized_problem, oracle_best
from ..identify import identify, make_identifiability_fixture
from ..mdp import (
    ScalarSignal,
    as_table,
    empirical_value,
    mdp_from_dict,
    mdp_to_dict,
    occupancy,
    policy_to_dict,
    save_trajectories,
)
from ..mticl import TaskBundle, mticl
from ..rng import child_seed
from ..solvers import crl
from .baseline import baseline_chou_result
from .config import ConfigError
from .readouts import direction_error, readout, wall_prediction

METRICS_HEADER = ["epoch", "J_r", "J_c_learned", "J_cstar", "JE_r", "JE_cstar", "regret", "avg_regret", "constraint_params"]
REGRET_HEADER = ["round", "loss", "regret", "avg_regret"]
MT_REGRET_HEADER = ["round", "task_id", "loss", "regret", "avg_regret"]
MT_FAMILIES = {"position": "position-slopes"}


class PipelineError(RuntimeError):
    pass


def fmt(x):
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return "nan" if math.isnan(x) else repr(x)
    return str(x)


def write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([fmt(v) for v in row])


def write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True, default=_json_default)
        fh.write("\n")


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


@dataclass(frozen=True)
class MetricsRow:
    epoch: int
    J_r: float
    J_c_learned: float
    J_cstar: float
    JE_r: float
    JE_cstar: float
    regret: float = None
    avg_regret: float = None
    constraint_params: str = ""

    def as_list(self):
        return [getattr(self, k) for k in METRICS_HEADER]


def eval_policy_vs_truth(mdp, policy, r, c_star, expert_trajs, c_learned=None, epoch=0):
    """Exact learner values (tabular) against expert values estimated from demos.

    ``policy`` may be a policy or an occupancy measure; ``c_learned`` a
    LinearConstraint (raw, unclipped values) or None for the zero constraint.
    """
    occ = policy if hasattr(policy, "rho") else occupancy(mdp, policy)
    rho = occ.rho
    learned = c_learned.values() if isinstance(c_learned, LinearConstraint) else (
        np.zeros(mdp.shape) if c_learned is None else as_table(c_learned))
    params = json.dumps(c_learned.weights.tolist()) if isinstance(c_learned, LinearConstraint) else ""
    return MetricsRow(
        epoch,
        float(np.sum(rho * as_table(r))),
        float(np.sum(rho * learned)),
        float(np.sum(rho * as_table(c_star))),
        empirical_value(expert_trajs, r),
        empirical_value(expert_trajs, c_star),
        constraint_params=params,
    )


def solve_under(mdp, r, c, expert_trajs, crl_params):
    """CRL under a learned constraint with the expert's empirical value as budget."""
    phi_e = trajectory_features(expert_trajs, c.feature_map).mean(axis=0)
    c_norm, d_norm = normalized_problem(c, float(c.weights @ phi_e))
    T = mdp.horizon
    return crl(mdp, as_table(r), c_norm, float(np.clip(d_norm, -T, T)), crl_params)


# -- environments on disk ------------------------------------------------------------


def save_environment(env, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    write_json(d / "mdp.json", mdp_to_dict(env.mdp))
    write_json(d / "environment.json", {
        "name": env.name,
        "reward": env.reward.values,
        "c_star": env.ground_truth.c_star.values,
        "description": env.ground_truth.description,
        "truth_weights": env.ground_truth.weights,
        "margin": env.ground_truth.margin,
        "feature_map": {"id": env.feature_map.id, "labels": list(env.feature_map.labels), "features": env.feature_map.features},
        "constraint_set": env.constraint_set.to_dict(),
        "info": {k: v for k, v in env.info.items() if k != "crl_params"},
        "grid": env.spec.to_dict() if isinstance(env.spec, _envs.GridSpec) else None,
    })
    if isinstance(env.spec, _envs.GridSpec):
        (d / "maze.txt").write_text(_envs.format_maze(env.spec) + "\n")


def load_environment(directory):
    d = Path(directory)
    with open(d / "mdp.json") as fh:
        mdp = mdp_from_dict(json.load(fh))
    with open(d / "environment.json") as fh:
        doc = json.load(fh)
    fm = doc["feature_map"]
    fmap = FeatureMap(np.array(fm["features"]), fm["id"], tuple(fm["labels"]))
    cs = doc["constraint_set"]
    cset = ConstraintSetDescriptor(cs["radius"], cs["dim"], tuple((np.array(g), b) for g, b in cs["halfspaces"]))
    gt = _envs.GroundTruth(ScalarSignal(np.array(doc["c_star"])), doc["description"],
                           np.array(doc["truth_weights"]), doc["margin"])
    info = {k: np.array(v) if isinstance(v, list) else v for k, v in doc["info"].items()}
    spec = _envs.GridSpec.from_dict(doc["grid"]) if doc.get("grid") else None
    return _envs.Environment(doc["name"], mdp, ScalarSignal(np.array(doc["reward"])), gt, fmap, cset, spec, info)


# -- pipelines -------------------------------------------------------------------------


def _fixture_env(cfg):
    fx = _envs.get_fixture(cfg.fixture)
    if cfg.env_file:
        return fx, load_environment(cfg.env_file)
    envs = fx.envs()
    if cfg.task >= len(envs):
        raise ConfigError(f"fixture {cfg.fixture!r} has {len(envs)} task(s); task {cfg.task} does not exist")
    return fx, envs[cfg.task]


def expert_demos(env, cfg, crl_params, seed=None):
    """(behaviour policy, training demos, validation demos) for one environment."""
    seed = cfg.seed if seed is None else seed
    total = cfg.n_demos + cfg.n_val_demos
    pol, demos = _envs.make_expert(env.mdp, env.reward, env.ground_truth, crl_params, cfg.noise, total, seed)
    return pol, demos[: cfg.n_demos], demos[cfg.n_demos:] or demos[: cfg.n_demos]


def _round_rows(trace, mdp_or_list, rewards, c_star, train):
    """Metric rows per epoch; multi-task rows average over tasks."""
    rows = []
    for i, c in enumerate(trace.constraints):
        res = trace.policies[i]
        results = res if isinstance(res, list) else [res]
        per_task = [
            eval_policy_vs_truth(mdp_or_list, r_.occupancy, rew, c_star, demos, c, i + 1)
            for r_, rew, demos in zip(results, rewards, train)
        ]
        _, reg, avg = trace.regret_curve[i]
        rows.append(MetricsRow(
            i + 1,
            *(float(np.mean([getattr(m, k) for m in per_task])) for k in ("J_r", "J_c_learned", "J_cstar", "JE_r", "JE_cstar")),
            reg,
            avg,
            json.dumps(c.weights.tolist()),
        ))
    return rows


def _write_rounds(out, trace):
    rounds = out / "rounds"
    rounds.mkdir(exist_ok=True)
    for i in range(trace.num_rounds):
        write_json(rounds / f"round_{i + 1:03d}.json", trace.round_record(i))


def readout_target(kind, env):
    """Value the readout takes for the true constraint."""
    return float(env.info["vmax"]) if kind == "threshold" else 1.0


def _pareto(row, T):
    return {
        "reward_gap_per_step": (row.J_r - row.JE_r) / T,
        "violation_gap_per_step": (row.J_cstar - row.JE_cstar) / T,
        "clipped_violation_gap_per_step": max(0.0, row.J_cstar - row.JE_cstar) / T,
    }


def run_icl(cfg, out):
    fx, env = _fixture_env(cfg)
    params = cfg.crl_params(fx.crl_params)
    N = cfg.rounds or fx.rounds
    _, train, val = expert_demos(env, cfg, params)
    trace = icl(env.mdp, env.reward, train, env.feature_map, env.constraint_set, N, params, cfg.seed,
                validation_trajs=val, cost_buffer=cfg.cost_buffer)
    rows = _round_rows(trace, env.mdp, [env.reward], env.ground_truth.c_star, [train])
    write_csv(out / "metrics.csv", METRICS_HEADER, [r.as_list() for r in rows])
    write_csv(out / "regret.csv", REGRET_HEADER, trace.regret_rows())
    phi_e = [trajectory_features(train, env.feature_map).mean(axis=0)]
    readouts = [(i + 1,) + readout(fx.readout, env, c.weights, phi_e) for i, c in enumerate(trace.constraints)]
    write_csv(out / "readout.csv", ["epoch", "name", "value"], readouts)
    _write_rounds(out, trace)
    write_json(out / "selected_constraint.json", trace.selected_constraint.to_dict())
    if fx.readout == "walls":
        _write_grid(out, env, trace.selected_constraint.weights, phi_e)
    sel = rows[trace.selected]
    best = oracle_best(trace, env.ground_truth.c_star, env.reward)
    T = env.mdp.horizon
    return {
        "algorithm": "icl",
        "fixture": cfg.fixture,
        "environment": env.name,
        "rounds": N,
        "selected": trace.selected,
        "oracle_best": best,
        "avg_regret": trace.avg_regret,
        "selected_metrics": dict(zip(METRICS_HEADER, sel.as_list())),
        "oracle_metrics": dict(zip(METRICS_HEADER, rows[best].as_list())),
        "pareto": _pareto(sel, T),
        "readout": dict([readout(fx.readout, env, trace.selected_constraint.weights, phi_e)]),
        "readout_target": readout_target(fx.readout, env),
        "direction_error": direction_error(env, trace.selected_constraint.weights),
        "clip_count": trace.selected_constraint.clip_count,
        "deltas": trace.deltas,
    }


def _mt_tasks(cfg, fx, params):
    """(training bundle, validation bundle or None, env list) for the multi-task pipeline."""
    if cfg.fixture == "maze10":
        envs = fx.envs()[: cfg.tasks or 10]
        pols, train, val = [], [], []
        for k, env in enumerate(envs):
            pol, tr, va = expert_demos(env, cfg, params, seed=child_seed(cfg.seed, "task", k))
            pols.append(pol)
            train.append(tr)
            val.append(va)
        bundle = TaskBundle(envs[0].mdp, [e.reward for e in envs], train, tuple(e.name for e in envs), pols, val)
        return bundle, None, envs
    if cfg.fixture in MT_FAMILIES:
        K = cfg.tasks or 10
        held = max(1, math.ceil(K / 4))  # 20% of all drawn tasks
        sampler = _envs.make_task_distribution(MT_FAMILIES[cfg.fixture], {"crl_params": params, "n_demos": cfg.n_demos,
                                                                           "noise_level": cfg.noise}, cfg.seed)
        tasks = sampler.draw(K + held)
        bundle = TaskBundle.from_tasks(tasks[:K])
        val = TaskBundle.from_tasks(tasks[K:])
        return bundle, val, [t.env for t in tasks[:K]]
    raise ConfigError(f"mticl supports fixtures {['maze10'] + sorted(MT_FAMILIES)}, not {cfg.fixture!r}")


def run_mticl(cfg, out):
    fx = _envs.get_fixture(cfg.fixture)
    params = cfg.crl_params(fx.crl_params)
    N = cfg.rounds or fx.rounds
    bundle, val, envs = _mt_tasks(cfg, fx, params)
    env = envs[0]
    trace = mticl(bundle, env.feature_map, env.constraint_set, N, params, cfg.seed, validation=val)
    rows = _round_rows(trace, bundle.mdp, bundle.rewards, env.ground_truth.c_star, bundle.expert_trajs)
    write_csv(out / "metrics.csv", METRICS_HEADER, [r.as_list() for r in rows])
    reg_rows = []
    for (i, loss, reg, avg), task_losses in zip(trace.regret_rows(), trace.diagnostics["task_losses"]):
        reg_rows.append((i, "all", loss, reg, avg))
        for k in bundle.order():
            reg_rows.append((i, bundle.task_ids[k], task_losses[k], reg, avg))
    write_csv(out / "regret.csv", MT_REGRET_HEADER, reg_rows)
    phi_e = [trajectory_features(d, env.feature_map).mean(axis=0) for d in bundle.expert_trajs]
    readouts = [(i + 1,) + readout(fx.readout, env, c.weights, phi_e) for i, c in enumerate(trace.constraints)]
    write_csv(out / "readout.csv", ["epoch", "name", "value"], readouts)
    _write_rounds(out, trace)
    write_json(out / "selected_constraint.json", trace.selected_constraint.to_dict())
    if fx.readout == "walls":
        _write_grid(out, env, trace.selected_constraint.weights, phi_e)
    sel = rows[trace.selected]
    return {
        "algorithm": "mticl",
        "fixture": cfg.fixture,
        "tasks": list(bundle.task_ids),
        "rounds": N,
        "selected": trace.selected,
        "avg_regret": trace.avg_regret,
        "selected_metrics": dict(zip(METRICS_HEADER, sel.as_list())),
        "pareto": _pareto(sel, bundle.mdp.horizon),
        "readout": dict([readout(fx.readout, env, trace.selected_constraint.weights, phi_e)]),
        "readout_target": readout_target(fx.readout, env),
        "assumption": trace.diagnostics["assumption"],
    }


def _write_grid(out, env, weights, phi_e):
    """Thresholded constraint grid (1 = flagged unsafe) next to the true walls."""
    spec = env.spec
    pred = wall_prediction(env, weights, phi_e).reshape(spec.height, spec.width).astype(int)
    truth = env.info["wall_mask"].reshape(spec.height, spec.width).astype(int)
    write_csv(out / "constraint_grid.csv", [f"x{x}" for x in range(spec.width)], pred.tolist())
    write_csv(out / "truth_grid.csv", [f"x{x}" for x in range(spec.width)], truth.tolist())


def run_crl(cfg, out):
    fx, env = _fixture_env(cfg)
    params = cfg.crl_params(fx.crl_params)
    gt = env.ground_truth
    res = crl(env.mdp, env.reward, gt.c_star, gt.expert_delta(env.mdp.horizon), params)
    write_json(out / "policy.json", policy_to_dict(res.mixture))
    write_json(out / "crl.json", res.to_dict(policy_file="policy.json"))
    write_csv(out / "lambda_trace.csv", ["iteration", "lambda"], [(i + 1, lam) for i, lam in enumerate(res.lambda_trace)])
    row = MetricsRow(1, res.achieved_value, res.achieved_violation, res.achieved_violation,
                     float("nan"), float("nan"), constraint_params="")
    write_csv(out / "metrics.csv", METRICS_HEADER, [row.as_list()])
    return {"algorithm": "crl", "fixture": cfg.fixture, "environment": env.name, **res.to_dict("policy.json")}


def run_baseline(cfg, out):
    fx, env = _fixture_env(cfg)
    params = cfg.crl_params(fx.crl_params)
    _, train, _ = expert_demos(env, cfg, params)
    result = baseline_chou_result(env.mdp, env.reward, train, env.feature_map, env.constraint_set,
                                  cfg.baseline_budget, cfg.seed)
    res = solve_under(env.mdp, env.reward, result.constraint, train, params)
    row = eval_policy_vs_truth(env.mdp, res.occupancy, env.reward, env.ground_truth.c_star, train, result.constraint, 1)
    write_csv(out / "metrics.csv", METRICS_HEADER, [row.as_list()])
    write_json(out / "selected_constraint.json", result.constraint.to_dict())
    phi_e = [trajectory_features(train, env.feature_map).mean(axis=0)]
    return {
        "algorithm": "baseline-chou",
        "fixture": cfg.fixture,
        "environment": env.name,
        "num_candidates": result.num_candidates,
        "num_sampled": result.num_sampled,
        "selected_metrics": dict(zip(METRICS_HEADER, row.as_list())),
        "pareto": _pareto(row, env.mdp.horizon),
        "readout": dict([readout(fx.readout, env, result.constraint.weights, phi_e)]),
        "direction_error": direction_error(env, result.constraint.weights),
    }


def run_identify(cfg, out):
    p = cfg.identify
    fixture = make_identifiability_fixture(cfg.seed, p.get("num_states", 3), p.get("num_actions", 2), p.get("horizon", 4))
    report = identify(fixture.mdp, fixture.experts, fixture.probe, fixture.c_star, fixture.rewards)
    write_json(out / "identify.json", report)
    return {
        "algorithm": "identify",
        "null_dim": report["null_dim"],
        "cosine_to_truth": report["cosine_to_truth"],
        "relint": all(report["relint"]),
        "mixture_independent": not any(m["violated"] for m in report["mixture_independence"]),
    }


PIPELINES = {"icl": run_icl, "mticl": run_mticl, "crl": run_crl, "baseline-chou": run_baseline, "identify": run_identify}


def run(cfg):
    """Execute ``cfg`` and return (run directory, report)."""
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "config.json", cfg.to_dict())
    try:
        report = PIPELINES[cfg.algorithm](cfg, out)
    except ConfigError:
        raise
    except Exception as err:
        write_json(out / "report.json", {"algorithm": cfg.algorithm, "error": f"{type(err).__name__}: {err}"})
        raise PipelineError(str(err)) from err
    write_json(out / "report.json", report)
    if cfg.figures:
        from .plotting import render_run

        render_run(out)
    return out, report


def reload_config(run_dir):
    from .config import from_dict

    with open(Path(run_dir) / "config.json") as fh:
        return from_dict(json.load(fh))


def evaluate_run(run_dir):
    """Re-solve CRL under a run's selected constraint and compare against the truth."""
    cfg = reload_config(run_dir)
    fx, env = _fixture_env(cfg)
    params = cfg.crl_params(fx.crl_params)
    with open(Path(run_dir) / "selected_constraint.json") as fh:
        c = LinearConstraint.from_dict(json.load(fh), env.feature_map)
    _, train, _ = expert_demos(env, cfg, params)
    res = solve_under(env.mdp, env.reward, c, train, params)
    row = eval_policy_vs_truth(env.mdp, res.occupancy, env.reward, env.ground_truth.c_star, train, c, 1)
    doc = dict(zip(METRICS_HEADER, row.as_list()))
    write_json(Path(run_dir) / "eval.json", doc)
    return doc


def generate_env(cfg):
    out = Path(cfg.out)
    fx = _envs.get_fixture(cfg.fixture)
    envs = fx.envs()
    for k, env in enumerate(envs):
        save_environment(env, out / (f"task{k:02d}" if len(envs) > 1 else "."))
    return out


def generate_expert(cfg):
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    fx, env = _fixture_env(cfg)
    params = cfg.crl_params(fx.crl_params)
    pol, train, val = expert_demos(env, cfg, params)
    save_trajectories(train, out / "demos.json")
    save_trajectories(val, out / "validation_demos.json")
    write_json(out / "expert.json", {
        "environment": env.name,
        "noise": cfg.noise,
        "J_r": float(np.sum(occupancy(env.mdp, pol).rho * env.reward.values)),
        "J_cstar": float(np.sum(occupancy(env.mdp, pol).rho * env.ground_truth.c_star.values)),
        "JE_r_empirical": empirical_value(train, env.reward),
        "JE_cstar_empirical": empirical_value(train, env.ground_truth.c_star),
    })
    return out


__all__ = [
    "METRICS_HEADER",
    "MetricsRow",
    "PipelineError",
    "eval_policy_vs_truth",
    "evaluate_run",
    "generate_env",
    "generate_expert",
    "load_environment",
    "run",
    "save_environment",
    "solve_under",
]
