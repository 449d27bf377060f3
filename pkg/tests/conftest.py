import pytest

from pilot_feasibility.hypotheses import HypothesisPair
from pilot_feasibility.model import DefinitiveDesign


@pytest.fixture(scope="session")
def design():
    return DefinitiveDesign(n_t=514, n_e=1000, mu=0.3, sigma0=1.0, alpha_one_sided=0.025)


@pytest.fixture(scope="session")
def hyp(design):
    return HypothesisPair.from_powers(design, 0.65, 0.8)


@pytest.fixture(scope="session")
def small_design():
    # small enough for brute-force oracles, large enough to skip the n_t warning
    return DefinitiveDesign(n_t=60, n_e=120, mu=0.8, sigma0=1.0)


def pytest_terminal_summary(terminalreporter):
    from tests_support import ACCEPTANCE_LINES
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
