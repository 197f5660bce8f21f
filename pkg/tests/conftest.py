import numpy as np
import pytest

from invmatch import sample, toy_scm
from invmatch.scm import GenConfig, random_scm


@pytest.fixture(scope="session")
def toy_spec():
    return toy_scm({0: 0.0, 2: 2.0})


@pytest.fixture(scope="session")
def toy_train(toy_spec):
    """Two toy environments, a = 0 and a = 2, 10^5 rows each."""
    rng = np.random.default_rng(20240501)
    return [sample(toy_spec, u, 100_000, rng) for u in (0, 2)]


@pytest.fixture(scope="session")
def small_spec():
    return random_scm(5, ["a", "b", "c"], GenConfig(), np.random.default_rng(7))


def small_data(spec, n=200, seed=0):
    rng = np.random.default_rng(seed)
    return [sample(spec, u, n, rng) for u in spec.env_labels]


# one line per acceptance criterion, echoed after the run
CRITERIA = {}


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}"
    CRITERIA[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
