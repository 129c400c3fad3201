import numpy as np
import pytest

from fcfl.model import ClientShard


def random_shard(rng, m=40, f=3, client_id="0"):
    X = rng.standard_normal((m, f))
    y = (rng.random(m) < 0.5).astype(int)
    a = (rng.random(m) < 0.5).astype(int)
    # both groups and both labels in both groups
    y[:4] = [0, 1, 0, 1]
    a[:4] = [0, 0, 1, 1]
    return ClientShard(X, y, a, client_id)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def shard(rng):
    return random_shard(rng)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[0][1:])):
            terminalreporter.write_line(line)
