import numpy as np
import pytest

from idvauction.experiment import generate_instance, trial_rng


def random_instances(family, n_values, per_n, seed=0, k=2, d=2.0):
    return [
        generate_instance(family, n, trial_rng(seed, n, family, t), k=k, d=d)
        for n in n_values
        for t in range(per_n)
    ]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS):
            terminalreporter.write_line(line)
