import os

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from sopai.net import Batch, init_network

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []

# (input, hidden..., features) for the small test networks
ARCHITECTURES = [(2, 4, 3), (3, 5, 4, 2), (4, 3), (3, 6, 6, 3)]


def toy(dims=(3, 5, 4), n=8, C=None, seed=0, task="t"):
    rng = np.random.default_rng(seed)
    C = C or dims[-1]
    net = init_network(dims, {task: C}, seed=seed)
    return net, Batch(rng.normal(size=(n, dims[0])), rng.integers(0, C, n))


@pytest.fixture
def small():
    return toy()


@pytest.fixture
def acceptance_report():
    return ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
