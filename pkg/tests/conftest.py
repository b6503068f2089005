import time

import pytest

from cofrag.kernels import DaughterDistribution, KernelSpec, PowerLawRate, PowerLawSumKernel
from cofrag.solver import Exponential, Scenario, run, two_run_distance

ALL_SINGLE = ("w_moment", "frag_flux", "small_moment", "high_moment")


def canonical_spec():
    return KernelSpec(PowerLawSumKernel(0.3, 0.3), PowerLawRate(1.0), DaughterDistribution(-1.2), 0.3)


def canonical_scenario(**kw):
    base = Scenario(canonical_spec(), Exponential(1.0, 1.0), x_min=1e-4, j=1e3, cells_per_decade=32,
                    t_end=5.0, cadence=0.25, checks=ALL_SINGLE)
    return base.with_(**kw) if kw else base


# pass/fail lines of the acceptance suite, echoed in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def canonical_timed():
    start = time.perf_counter()
    result = run(canonical_scenario())
    return result, time.perf_counter() - start


@pytest.fixture(scope="session")
def canonical_result(canonical_timed):
    return canonical_timed[0]


@pytest.fixture(scope="session")
def canonical_pair():
    return two_run_distance(canonical_scenario())
