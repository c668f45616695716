"""Shared pytest hooks: a one-line PASS/FAIL summary per acceptance check."""

from __future__ import annotations

ACCEPTANCE_FILE = "test_acceptance.py"
_results: list[tuple[str, str]] = []


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    name = report.nodeid.split("::")[-1]
    if report.when == "call":
        _results.append((name, report.outcome))
    elif report.when == "setup" and report.outcome != "passed":
        _results.append((name, report.outcome))


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _results:
        return
    terminalreporter.write_sep("-", "acceptance summary")
    for name, outcome in _results:
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}")
