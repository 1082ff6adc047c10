from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from randsir.model import ModelParams, NoiseBounds
from randsir.noise import OUConfig, ou_path

settings.register_profile(
    "randsir", max_examples=60, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("randsir")

# master seed for every stochastic test; fixed before any run
MASTER_SEED = 2024


@pytest.fixture
def erad_params() -> ModelParams:
    return ModelParams(q=5.0, a=1.5, b=0.5, c=0.7, gamma=1.25)


@pytest.fixture
def endemic_params() -> ModelParams:
    return ModelParams(q=5.0, a=1.5, b=0.5, c=0.7, gamma=5.0)


@pytest.fixture
def bounds_d() -> NoiseBounds:
    return NoiseBounds(1.5)


@pytest.fixture
def bounds_de() -> NoiseBounds:
    return NoiseBounds(1.5, 0.5)


@pytest.fixture
def short_ou():
    return ou_path(OUConfig(-50.0, 50.0, 1e-3, 11))


def random_params(rng: np.random.Generator) -> ModelParams:
    return ModelParams(q=rng.uniform(0.5, 10), a=rng.uniform(0.1, 3), b=rng.uniform(0.05, 2),
                       c=rng.uniform(0.05, 2), gamma=rng.uniform(0.1, 10))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
