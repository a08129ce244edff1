import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_CRITERIA = {}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(name): acceptance criterion checked by the test")


def pytest_runtest_logreport(report):
    # one verdict per criterion; a failure in any phase wins
    marks = dict(report.user_properties)
    name = marks.get("criterion")
    if name is None:
        return
    if report.when == "call" or report.failed:
        prev = _CRITERIA.get(name)
        if prev is None or prev[0] == "PASS":
            status = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")
            _CRITERIA[name] = (status, marks.get("detail", ""))


def pytest_runtest_setup(item):
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        item.user_properties.append(("criterion", mark.args[0]))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_CRITERIA, key=lambda s: int(s[1:])):
        status, detail = _CRITERIA[name]
        terminalreporter.write_line(f"{name} {status}  {detail}")
