import numpy as np
import pytest

from kfpbismut.estimators import McConfig

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)


@pytest.fixture
def small_cfg():
    return McConfig(n_paths=20_000, n_steps=64, master_seed=7)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
