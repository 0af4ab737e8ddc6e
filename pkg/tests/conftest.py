import os
import sys

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, os.path.dirname(__file__))

settings.register_profile("default", deadline=None, derandomize=True,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

# ---------------------------------------------------------------- acceptance criteria
# Tests marked ``criterion(number, title, limit_s)`` fail when they exceed their time
# limit and get one PASS/FAIL line each in the terminal summary.

_CRITERIA: list[tuple[int, str, bool, float, float, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title, limit_s): numbered acceptance criterion")


@pytest.fixture
def note(request):
    """Attach a one-line measurement (ratios, counts) to the criterion summary."""
    def add(text: str) -> None:
        request.node.user_properties.append(("note", text))
    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or report.when != "call":
        return
    number, title, limit = marker.args
    if report.passed and call.duration > limit:
        report.outcome = "failed"
        report.longrepr = f"criterion {number} took {call.duration:.1f} s, limit {limit} s"
    notes = "; ".join(v for k, v in item.user_properties if k == "note")
    _CRITERIA.append((number, title, report.passed, call.duration, limit, notes))


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, duration, limit, notes in sorted(_CRITERIA):
        line = f"{'PASS' if passed else 'FAIL'}  {number:2d}. {title}  ({duration:.1f} s, limit {limit:g} s)"
        terminalreporter.write_line(line + (f"  {notes}" if notes else ""))
