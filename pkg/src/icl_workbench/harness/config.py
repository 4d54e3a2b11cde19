"""Run configuration: a JSON document plus ICL_-prefixed environment overrides.

Nested keys are joined with a double underscore, so ``ICL_CRL__NUM_ITERS=500``
sets ``crl.num_iters``. Values are parsed as JSON when possible and kept as
strings otherwise.
"""

import json
import os
import re
from dataclasses import asdict, dataclass, field, fields

from ..envs import FIXTURES
from ..solvers import CrlParams

ENV_PREFIX = "ICL_"
ALGORITHMS = ("crl", "icl", "mticl", "identify", "baseline-chou")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    algorithm: str = "icl"
    fixture: str = "velocity"
    env_file: str = None  # a saved environment directory, overriding the fixture's single task
    task: int = 0  # which fixture task the single-task pipelines use
    seed: int = 0
    rounds: int = None  # None: the fixture's default
    tasks: int = None  # mticl: how many fixture tasks to use (None: all)
    noise: float = 0.0
    n_demos: int = 20
    n_val_demos: int = 20
    baseline_budget: int = 600
    cost_buffer: float = 0.0
    crl: dict = field(default_factory=dict)  # CrlParams overrides
    identify: dict = field(default_factory=lambda: {"num_states": 3, "num_actions": 2, "horizon": 4})
    out: str = "runs/latest"
    figures: bool = True

    def crl_params(self, base):
        doc = {**base.to_dict(), **self.crl}
        try:
            return CrlParams.from_dict(doc)
        except (TypeError, ValueError) as err:
            raise ConfigError(f"crl: {err}") from err

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _line_of(text, key):
    m = re.search(r'"%s"\s*:' % re.escape(key), text or "")
    return text.count("\n", 0, m.start()) + 1 if m else None


def _where(text, key):
    line = _line_of(text, key)
    return f"line {line}: " if line else ""


def validate(cfg, text=None):
    if cfg.algorithm not in ALGORITHMS:
        raise ConfigError(f"{_where(text, 'algorithm')}algorithm must be one of {', '.join(ALGORITHMS)}")
    if cfg.fixture not in FIXTURES:
        raise ConfigError(f"{_where(text, 'fixture')}unknown fixture {cfg.fixture!r}; known: {', '.join(sorted(FIXTURES))}")
    for key in ("seed", "task", "n_demos", "n_val_demos", "baseline_budget"):
        val = getattr(cfg, key)
        if not isinstance(val, int) or isinstance(val, bool) or val < 0:
            raise ConfigError(f"{_where(text, key)}{key} must be a nonnegative integer")
    for key in ("rounds", "tasks"):
        val = getattr(cfg, key)
        if val is not None and (not isinstance(val, int) or val < 1):
            raise ConfigError(f"{_where(text, key)}{key} must be a positive integer")
    if cfg.n_demos < 1:
        raise ConfigError(f"{_where(text, 'n_demos')}n_demos must be >= 1")
    if not isinstance(cfg.noise, (int, float)) or not 0 <= cfg.noise <= 1:
        raise ConfigError(f"{_where(text, 'noise')}noise must lie in [0, 1]")
    if not isinstance(cfg.crl, dict):
        raise ConfigError(f"{_where(text, 'crl')}crl must be an object")
    unknown = set(cfg.crl) - {f.name for f in fields(CrlParams)}
    if unknown:
        raise ConfigError(f"{_where(text, sorted(unknown)[0])}unknown crl key {sorted(unknown)[0]!r}")
    try:
        CrlParams.from_dict({**CrlParams().to_dict(), **cfg.crl})
    except (TypeError, ValueError) as err:
        raise ConfigError(f"{_where(text, 'crl')}crl: {err}") from err
    return cfg


def from_dict(doc, text=None):
    known = {f.name for f in fields(RunConfig)}
    for key in doc:
        if key not in known:
            raise ConfigError(f"{_where(text, key)}unknown config key {key!r}")
    return validate(RunConfig(**doc), text)


def _parse_scalar(raw):
    try:
        return json.loads(raw)
    except json.JSONDecodeError:
        return raw


def env_overrides(environ=None):
    """Nested dict of overrides from ICL_* variables."""
    environ = os.environ if environ is None else environ
    out = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        path = name[len(ENV_PREFIX):].lower().split("__")
        node = out
        for part in path[:-1]:
            node = node.setdefault(part, {})
        node[path[-1]] = _parse_scalar(environ[name])
    return out


def _merge(base, extra):
    merged = dict(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(merged.get(key), dict):
            merged[key] = _merge(merged[key], val)
        else:
            merged[key] = val
    return merged


def load(path=None, overrides=None, environ=None):
    """Config from an optional JSON file, then ICL_ variables, then explicit overrides."""
    doc, text = {}, None
    if path:
        with open(path) as fh:
            text = fh.read()
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as err:
            raise ConfigError(f"line {err.lineno}: {err.msg}") from err
        if not isinstance(doc, dict):
            raise ConfigError("line 1: the config must be a JSON object")
    doc = _merge(doc, env_overrides(environ))
    doc = _merge(doc, {k: v for k, v in (overrides or {}).items() if v is not None})
    return from_dict(doc, text)
