import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from icl_workbench import rng
from icl_workbench.mdp import Mdp, random_mdp

settings.register_profile("workbench", max_examples=30, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("workbench")


def bandit(num_actions=2, horizon=1):
    """One state, ``num_actions`` arms."""
    return Mdp(np.ones((1, num_actions, 1)), np.ones(1), horizon)


def chain2(horizon=2):
    """s0 -> s1 under a0 (s0 stays under a1); s1 absorbing."""
    P = np.zeros((2, 2, 2))
    P[0, 0, 1] = 1.0
    P[0, 1, 0] = 1.0
    P[1, :, 1] = 1.0
    return Mdp(P, np.array([1.0, 0.0]), horizon)


def rand_mdp(seed, S=4, A=2, T=4):
    return random_mdp(rng.stream(seed, "test-mdp"), S, A, T)


@pytest.fixture
def gen():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config._criteria = []


@pytest.fixture
def record_criterion(request):
    """Print and remember one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
        print(line)
        request.config._criteria.append(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_criteria", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
