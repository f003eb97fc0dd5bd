import numpy as np
import pytest

from esihgnn import numeric as nc

_ACCEPTANCE = []


@pytest.fixture(autouse=True)
def _restore_precision():
    before = nc.get_default_dtype()
    yield
    nc.set_default_dtype(before)


@pytest.fixture
def float64():
    with nc.precision("float64"):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE.append((report.nodeid.split("::")[-1], report.outcome, report.duration))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, outcome, duration in _ACCEPTANCE:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  ({duration:.1f}s)")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training checks")
