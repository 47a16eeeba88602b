import pytest

from vpstab.casimir import CasimirFunction
from vpstab.ensemble import sample_f0
from vpstab.steady import build_steady

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def steady_k1():
    return build_steady(CasimirFunction.polytropic(1.0), 1.0)


@pytest.fixture(scope="session")
def steady_by_k():
    return {k: build_steady(CasimirFunction.polytropic(k), 1.0) for k in (0.5, 1.0, 1.25)}


@pytest.fixture(scope="session")
def ens_k1(steady_k1):
    return sample_f0(steady_k1, 10_000, 11)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(".")[0].split()[-1])):
            terminalreporter.write_line(line)
