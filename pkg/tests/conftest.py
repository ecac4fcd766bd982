import pytest

from gpseg.nonlinearity import Nonlinearity
from gpseg.outer import compute_corrections, solve_limit_problem


@pytest.fixture(scope="session")
def limit():
    f = Nonlinearity.power(0.0, 1.0)
    return solve_limit_problem(f, f, 3)


@pytest.fixture(scope="session")
def expansion(limit):
    return compute_corrections(limit)


@pytest.fixture(scope="session")
def profile1():
    from gpseg.blowup import solve_profile

    return solve_profile(1.0, 8.0, 4001)


@pytest.fixture(scope="session")
def inner_profile(limit):
    from gpseg.blowup import solve_profile

    return solve_profile(limit.psi0, 6.0, 8001)


@pytest.fixture(scope="session")
def phi0(limit, inner_profile):
    from gpseg.blowup import compute_phi0

    return compute_phi0(inner_profile, limit.r0, limit.dim)


LADDER = (1e4, 1e5, 1e6, 1e7, 1e8)


@pytest.fixture(scope="session")
def construction():
    from gpseg.assembly import prepare

    f = Nonlinearity.power(0.0, 1.0)
    return prepare(f, f, 3)


@pytest.fixture(scope="session")
def ladder(construction):
    from gpseg.assembly import construct

    return {g: construct(construction, g) for g in LADDER}


@pytest.fixture(scope="session")
def solutions(construction):
    from gpseg.solver import solve_ladder

    return solve_ladder(construction, LADDER)


# PASS/FAIL lines from the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
