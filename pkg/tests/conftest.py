import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from survsens.data import Dataset
from survsens.simulation import DgpConfig, generate

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def sim1000():
    return generate(DgpConfig(n=1000, seed=11)).data


@pytest.fixture(scope="session")
def sim2500():
    return generate(DgpConfig(n=2500, seed=5)).data


def make_dataset(time, event, trt, cov=None, names=None):
    time = np.asarray(time, dtype=float)
    cov = np.zeros((time.size, 1)) if cov is None else np.asarray(cov, dtype=float).reshape(time.size, -1)
    names = names or tuple(f"x{j + 1}" for j in range(cov.shape[1]))
    return Dataset(time, np.asarray(event, dtype=int), np.asarray(trt, dtype=int), cov, tuple(names))


def pytest_terminal_summary(terminalreporter):
    from acceptance_log import RESULTS
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for k in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[k])
