"""Collects acceptance outcomes and prints one PASS/FAIL line per criterion."""

import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    name = marker.args[0]
    details = [v for k, v in item.user_properties if k == "detail"]
    if report.when == "call" or (report.when == "setup" and report.failed):
        _RESULTS[name] = ("PASS" if report.passed else "FAIL", details)


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, (status, details) in _RESULTS.items():
        line = f"{status}  {name}"
        if details:
            line += "  [" + "; ".join(details) + "]"
        terminalreporter.write_line(line)
