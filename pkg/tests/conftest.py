import pytest

from epsfdd.config import resolve
from epsfdd.pipeline import simulate_all, train_bank


@pytest.fixture(scope="session")
def default_cfg():
    return resolve()


@pytest.fixture(scope="session")
def default_telemetry(default_cfg):
    """All seven classes at the default 2001 samples, dt 60 s."""
    return simulate_all(default_cfg)


@pytest.fixture(scope="session")
def default_bank(default_cfg, default_telemetry):
    return train_bank(default_cfg, default_telemetry)


ACCEPTANCE_LINES: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[n])
