"""``icl-bench`` command line.

Exit codes: 0 success, 2 configuration error, 3 pipeline error, 4 a fixture
missed one of its acceptance thresholds under ``check``.
"""

import json
import sys
from pathlib import Path

import click

from .envs import get_fixture
from .harness import config as _config
from .harness import runner

EXIT_CONFIG, EXIT_PIPELINE, EXIT_CHECK = 2, 3, 4


def common_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(dir_okay=False), help="JSON config file."),
        click.option("--seed", type=int, help="Master seed."),
        click.option("--out", type=click.Path(file_okay=False), help="Output directory."),
        click.option("--fixture", help="Fixture name (velocity, position, maze10)."),
        click.option("--tasks", type=int, help="Number of tasks for mticl."),
        click.option("--rounds", type=int, help="Game rounds N."),
        click.option("--noise", type=float, help="Demo noise level in [0, 1]."),
    ]
    for opt in reversed(options):
        fn = opt(fn)
    return fn


def _load(algorithm, config_path, **flags):
    overrides = dict(flags)
    if algorithm:
        overrides["algorithm"] = algorithm
    try:
        return _config.load(config_path, overrides)
    except (_config.ConfigError, OSError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)


def _execute(cfg):
    try:
        out, report = runner.run(cfg)
    except _config.ConfigError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    except runner.PipelineError as err:
        click.echo(f"pipeline error: {err} (details in {Path(cfg.out) / 'report.json'})", err=True)
        sys.exit(EXIT_PIPELINE)
    click.echo(f"wrote {out}")
    return out, report


@click.group()
def main():
    """Learn shared safety constraints from expert demonstrations."""


def _pipeline_command(name):
    @common_options
    def command(config_path, **flags):
        _execute(_load(name, config_path, **flags))

    command.__name__ = name.replace("-", "_")
    command.__doc__ = f"Run the {name} pipeline and write a run directory."
    return main.command(name)(command)


for _name in _config.ALGORITHMS:
    _pipeline_command(_name)


@main.command("gen-env")
@common_options
def gen_env(config_path, **flags):
    """Write a fixture's environment(s) to disk."""
    cfg = _load(None, config_path, **flags)
    try:
        click.echo(f"wrote {runner.generate_env(cfg)}")
    except KeyError as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command("gen-expert")
@common_options
def gen_expert(config_path, **flags):
    """Solve the expert under the true constraint and write demonstrations."""
    cfg = _load(None, config_path, **flags)
    try:
        click.echo(f"wrote {runner.generate_expert(cfg)}")
    except (KeyError, _config.ConfigError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)


@main.command("eval")
@click.argument("run_dir", type=click.Path(exists=True, file_okay=False))
def eval_cmd(run_dir):
    """Re-solve under a run's selected constraint and score it against the truth."""
    try:
        doc = runner.evaluate_run(run_dir)
    except (OSError, KeyError, ValueError) as err:
        click.echo(f"pipeline error: {err}", err=True)
        sys.exit(EXIT_PIPELINE)
    click.echo(json.dumps(doc, sort_keys=True))


def check_fixture(cfg):
    """Run a fixture's acceptance pipeline and compare with its stored thresholds.

    Returns (passed, details). Maze fixtures run the multi-task game; the
    others run single-task ICL.
    """
    fx = get_fixture(cfg.fixture)
    cfg.algorithm = "mticl" if fx.readout == "walls" else "icl"
    _, report = runner.run(cfg)
    th = fx.thresholds
    T_slack = th["pareto_slack"]
    pareto = report["pareto"]
    checks = {
        "reward": pareto["reward_gap_per_step"] >= -T_slack,
        "violation": pareto["violation_gap_per_step"] <= report["avg_regret"] + T_slack,
    }
    value = next(iter(report["readout"].values()))
    if "threshold_error" in th:
        checks["readout"] = abs(value - report["readout_target"]) <= th["threshold_error"]
    if "cosine" in th:
        checks["readout"] = value >= th["cosine"]
    if "f1" in th:
        checks["readout"] = value >= th["f1"]
    return all(checks.values()), {"checks": checks, "readout": value, "pareto": pareto}


@main.command("check")
@common_options
def check(config_path, **flags):
    """Run a fixture's acceptance checks; exit 4 when a threshold is missed."""
    cfg = _load(None, config_path, **flags)
    try:
        passed, details = check_fixture(cfg)
    except (KeyError, _config.ConfigError) as err:
        click.echo(f"config error: {err}", err=True)
        sys.exit(EXIT_CONFIG)
    except runner.PipelineError as err:
        click.echo(f"pipeline error: {err}", err=True)
        sys.exit(EXIT_PIPELINE)
    runner.write_json(Path(cfg.out) / "check.json", {"passed": passed, **details})
    for name, ok in details["checks"].items():
        click.echo(f"{'PASS' if ok else 'FAIL'} {cfg.fixture} {name}")
    if not passed:
        sys.exit(EXIT_CHECK)


if __name__ == "__main__":
    main()
