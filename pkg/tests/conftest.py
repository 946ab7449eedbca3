import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from subspace_inference import Architecture, Dataset, ParamVector

settings.register_profile("default", max_examples=40, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def random_params(arch: Architecture, rng: np.random.Generator, scale: float = 0.5) -> ParamVector:
    return ParamVector(scale * rng.standard_normal(arch.num_weights), float(rng.normal()))


def random_regression(rng: np.random.Generator, n: int, d: int) -> Dataset:
    x = rng.standard_normal((n, d))
    y = np.sin(x).sum(axis=1) + 0.1 * rng.standard_normal(n)
    return Dataset(x, y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_CRITERIA = {}


@pytest.fixture
def criterion():
    """Record one pass/fail line per acceptance criterion; shown in the terminal summary."""

    def record(number, passed, detail):
        line = f"criterion {number}: {'PASS' if passed else 'FAIL'}  {detail}"
        _CRITERIA[number] = line
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for key in sorted(_CRITERIA, key=lambda k: (int(str(k).rstrip("ab")), str(k))):
            terminalreporter.write_line(_CRITERIA[key])
