from __future__ import annotations

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from panelfe.panel import PanelDataset

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")

_ACCEPTANCE_LINES: list[str] = []


def random_panel(rng: np.random.Generator, n: int = 6, T: int = 8, p: int = 1,
                 effects: bool = True) -> PanelDataset:
    """A small static panel ``y = x b + c_i + noise`` for property tests."""
    x = rng.standard_normal((n, T, p))
    c = rng.standard_normal(n) if effects else np.zeros(n)
    b = rng.uniform(-1, 1, p)
    y = x @ b + c[:, None] + rng.standard_normal((n, T))
    return PanelDataset(y, x)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one line per acceptance criterion, printed in the terminal summary."""
    return _ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in _ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
