import pytest

from magmap import Domain, Hyperparameters

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def record_criterion():
    """Print and keep one PASS/FAIL line per acceptance criterion."""

    def record(number, passed, detail):
        line = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return passed

    return record


@pytest.fixture
def unit_domain():
    return Domain((0.5, 0.5, 0.5))


@pytest.fixture
def sim_theta():
    return Hyperparameters(sigma2_lin=0.3, sigma2_se=1.0, ell_se=0.1, sigma2_noise=0.04)
