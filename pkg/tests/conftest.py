import os

import numpy as np
import pytest

from stealthrl.agent import BcConfig, train_bc
from stealthrl.env import make_env

os.environ.setdefault("OMP_NUM_THREADS", "1")

_RESULTS = []


def record_acceptance(name: str, passed: bool, detail: str) -> None:
    """Collect one line per acceptance criterion for the end-of-run summary."""
    line = f"{name}: {'PASS' if passed else 'FAIL'} - {detail}"
    _RESULTS.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if _RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in _RESULTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def catch_env():
    return make_env("catch")


@pytest.fixture(scope="session")
def lanekeep_env():
    return make_env("lanekeep")


@pytest.fixture(scope="session")
def lanekeep7_env():
    return make_env("lanekeep7")


@pytest.fixture(scope="session")
def catch_victim(catch_env):
    return train_bc(catch_env, cfg=BcConfig(seed=0))


@pytest.fixture(scope="session")
def lanekeep_victim(lanekeep_env):
    return train_bc(lanekeep_env, cfg=BcConfig(seed=0))


@pytest.fixture(scope="session")
def lanekeep7_victim(lanekeep7_env):
    return train_bc(lanekeep7_env, cfg=BcConfig(seed=0))


class ConstPolicy:
    """Discrete policy that always picks the same action."""

    discrete = True

    def __init__(self, action=0, k=3):
        self.action = action
        self.k = k

    def act(self, obs, mode="greedy", rng=None):
        return self.action

    def distribution(self, obs):
        p = np.zeros(self.k)
        p[self.action] = 1.0
        return p


@pytest.fixture
def const_policy():
    return ConstPolicy
