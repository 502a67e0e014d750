"""Shared fixtures and the acceptance-criteria terminal summary."""

from pathlib import Path

import numpy as np
import pytest

from uniq_mdp.config import load_experiment_config
from uniq_mdp.oracles import random_mdp, random_policy

REPO = Path(__file__).resolve().parent.parent

# one line per acceptance criterion, echoed after the run regardless of capture
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def criterion():
    def record(name: str, ok: bool, detail: str) -> None:
        line = f"{'PASS' if ok else 'FAIL'} {name}: {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        assert ok, line

    return record


@pytest.fixture
def rng():
    return np.random.default_rng(0)


@pytest.fixture
def small_mdp(rng):
    return random_mdp(4, 3, 0.9, rng)


@pytest.fixture
def small_policy(rng, small_mdp):
    return random_policy(small_mdp.num_states, small_mdp.num_actions, rng)


@pytest.fixture(scope="session")
def band8_config():
    return load_experiment_config(REPO / "configs" / "band8.yaml")
