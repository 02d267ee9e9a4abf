"""Shared pytest hooks: a one-line-per-criterion summary for the acceptance suite."""

import re

_ACCEPTANCE = {}
_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")


def pytest_runtest_logreport(report):
    match = _CRITERION.search(report.nodeid)
    if not match:
        return
    key = (int(match.group(1)), match.group(2))
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _ACCEPTANCE[key] = "PASS" if report.passed else ("SKIP" if report.skipped else "FAIL")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for (num, name), outcome in sorted(_ACCEPTANCE.items()):
        terminalreporter.write_line(f"criterion {num:2d} [{name}]: {outcome}")
