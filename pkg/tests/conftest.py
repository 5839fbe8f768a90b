import pytest

from divratchet.cascade import CascadeConfig, assemble_surface, solve_cascade
from divratchet.model import REFERENCE_PARAMS, ModelParams

SIMPLE_PARAMS = ModelParams(mu=0.4, sigma=0.4, r=0.05, c_bar=0.005)


@pytest.fixture(scope="session")
def ref_cascade():
    return solve_cascade(REFERENCE_PARAMS, CascadeConfig(n=64, h=2e-3))


@pytest.fixture(scope="session")
def ref_surface(ref_cascade):
    return assemble_surface(ref_cascade)


@pytest.fixture(scope="session")
def small_surface():
    # coarse and cheap; enough for plumbing tests
    return assemble_surface(solve_cascade(REFERENCE_PARAMS, CascadeConfig(n=16, h=8e-3)))


@pytest.fixture(scope="session")
def simple_surface():
    return assemble_surface(solve_cascade(SIMPLE_PARAMS, CascadeConfig(n=16)))


# one line per acceptance criterion, printed after the run regardless of capture
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
