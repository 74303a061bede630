import pytest

from homfrac.quadrature import QuadratureConfig

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def cfg():
    return QuadratureConfig(n_samples=50_000, seed=0)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
