"""Collects the outcome of each acceptance criterion and prints a summary."""

import pytest

_RESULTS = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _RESULTS.setdefault(number, {"title": title, "failed": False, "passed": 0, "seconds": 0.0})
    if report.failed:
        entry["failed"] = True
    if report.when == "call":
        entry["seconds"] += report.duration
        if report.passed:
            entry["passed"] += 1


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_RESULTS):
        entry = _RESULTS[number]
        status = "PASS" if entry["passed"] and not entry["failed"] else "FAIL"
        terminalreporter.write_line(f"criterion {number}: {status}  {entry['title']}  ({entry['seconds']:.1f} s)")
