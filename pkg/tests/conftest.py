import dataclasses
import re
import time

import pytest

import mmru

# shared Monte Carlo pools; built once, reused by the statistical tests
POOL_REPLICATIONS = 1000

_criterion_outcomes = {}
_pool_build_seconds = {}


def pytest_runtest_logreport(report):
    match = re.search(r"test_criterion_(\d+)", report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    if report.failed:
        _criterion_outcomes[number] = "FAIL"
    elif report.when == "call" and report.passed:
        _criterion_outcomes.setdefault(number, "PASS")


def pytest_terminal_summary(terminalreporter):
    if not _criterion_outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criterion_outcomes):
        terminalreporter.write_line(f"ACCEPTANCE {number} {_criterion_outcomes[number]}")


@pytest.fixture(scope="session")
def case_a_pool():
    """1000 replications of case-a at the default horizon and seed."""
    spec = dataclasses.replace(
        mmru.scenario_by_name("case-a"), replications=POOL_REPLICATIONS
    )
    start = time.monotonic()
    summary = mmru.run_replications(spec, parallelism=1)
    _pool_build_seconds["case-a"] = time.monotonic() - start
    return summary


@pytest.fixture(scope="session")
def case_a_pool_seconds(case_a_pool):
    return _pool_build_seconds["case-a"]


@pytest.fixture(scope="session")
def equal_arms_pool():
    """1000 tested replications of the all-tied scenario."""
    spec = mmru.scenario_by_name("equal-arms")
    return mmru.run_replications(spec, parallelism=1, k0=3, alpha=0.05)
