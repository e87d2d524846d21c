import numpy as np
import pytest

from mixgrad.mixture import MixtureModel

_CRITERIA: dict[str, tuple[bool, str]] = {}


@pytest.fixture
def record_criterion():
    """Record an acceptance verdict; printed in the terminal summary."""

    def record(key: str, passed: bool, detail: str = ""):
        _CRITERIA[key] = (bool(passed), detail)
        return passed

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(_CRITERIA, key=lambda k: int(k.split()[0])):
        passed, detail = _CRITERIA[key]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {key} {detail}")


@pytest.fixture
def two_bump():
    """K=2, D=1, equal weights, unit Gaussians at -1 and +1."""
    return MixtureModel.create([[-1.0], [1.0]], 1.0, weights=[0.5, 0.5])


@pytest.fixture
def two_bump_2d():
    """K=2, D=2 with means (-1,-1) and (1,1)."""
    return MixtureModel.create([[-1.0, -1.0], [1.0, 1.0]], 1.0, weights=[0.5, 0.5])


def random_model(rng, K, D, family="gaussian"):
    return MixtureModel.create(
        rng.uniform(-2.0, 2.0, (K, D)), rng.uniform(0.5, 2.0, (K, D)), logits=rng.normal(0.0, 0.7, K), family=family
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
