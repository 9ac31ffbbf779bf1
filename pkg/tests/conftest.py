import numpy as np
import pytest

from ilash.graph import TaskInfo, conv, dense, default_template, flatten, pool
from ilash.trainer import synth_dataset


def cls_task(tid=1, n=3, shape=(8, 8, 1)):
    return TaskInfo(tid, "classification", n, shape)


def reg_task(tid=2, shape=(8, 8, 1)):
    return TaskInfo(tid, "regression", 1, shape)


def chain5():
    """Five shareable layers for 8x8 inputs."""
    return [conv(4, 3), conv(4, 3, padding="valid"), pool(), flatten(), dense(8)]


@pytest.fixture
def template5():
    return chain5()


@pytest.fixture
def three_tasks():
    return [cls_task(1, 4), reg_task(2), cls_task(3, 1)]


@pytest.fixture(scope="session")
def small_data():
    return synth_dataset(tasks=3, samples=120, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def template11():
    return default_template()


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
